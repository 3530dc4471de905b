//! Vector-valued reverse-mode tape.
//!
//! Every node holds a dense vector. Parameters are never copied into the
//! graph as variables; ops that read parameters carry their offset into the
//! flat parameter vector, and [`Tape::backward`] accumulates straight into a
//! flat gradient of the same length.

use super::scalar::Scalar;

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op<T> {
    Input,
    /// Contiguous parameter slice (bias, embedding row, position row).
    Param {
        offset: usize,
    },
    /// Row-major `rows x cols` parameter matrix times `x`.
    MatVec {
        offset: usize,
        rows: usize,
        cols: usize,
        x: NodeId,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Slice {
        x: NodeId,
        start: usize,
    },
    Concat(NodeId, NodeId),
    /// Dot product of `query` with every key.
    Scores {
        query: NodeId,
        keys: Vec<NodeId>,
    },
    Softmax(NodeId),
    /// Weighted sum of `values` by the entries of `weights`.
    Mix {
        weights: NodeId,
        values: Vec<NodeId>,
    },
    /// `weight * (logsumexp(logits) - logits[target])`.
    CrossEntropy {
        logits: NodeId,
        target: usize,
        weight: T,
    },
    Sum(Vec<NodeId>),
    Scale(NodeId, T),
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Vec<T>,
    op: Op<T>,
}

/// Computation record over a borrowed parameter vector.
#[derive(Debug, Clone)]
pub struct Tape<'p, T> {
    params: &'p [T],
    nodes: Vec<Node<T>>,
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new(params: &'p [T]) -> Self {
        Tape { params, nodes: Vec::with_capacity(256) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[T] {
        &self.nodes[id].value
    }

    pub fn scalar(&self, id: NodeId) -> T {
        self.nodes[id].value[0]
    }

    fn push(&mut self, value: Vec<T>, op: Op<T>) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn input(&mut self, value: Vec<T>) -> NodeId {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, offset: usize, len: usize) -> NodeId {
        let value = self.params[offset..offset + len].to_vec();
        self.push(value, Op::Param { offset })
    }

    pub fn matvec(&mut self, offset: usize, rows: usize, cols: usize, x: NodeId) -> NodeId {
        let xv = &self.nodes[x].value;
        debug_assert_eq!(xv.len(), cols);
        let w = &self.params[offset..offset + rows * cols];
        let value =
            w.chunks_exact(cols).map(|row| row.iter().zip(xv).fold(T::zero(), |acc, (&a, &b)| acc + a * b)).collect();
        self.push(value, Op::MatVec { offset, rows, cols, x })
    }

    fn zip_with(&mut self, a: NodeId, b: NodeId, op: Op<T>, f: impl Fn(T, T) -> T) -> NodeId {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        debug_assert_eq!(va.len(), vb.len());
        let value = va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect();
        self.push(value, op)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.iter().map(|&x| sigmoid(x)).collect();
        self.push(value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.iter().map(|&x| x.tanh()).collect();
        self.push(value, Op::Tanh(a))
    }

    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let value = self.nodes[x].value[start..start + len].to_vec();
        self.push(value, Op::Slice { x, start })
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut value = self.nodes[a].value.clone();
        value.extend_from_slice(&self.nodes[b].value);
        self.push(value, Op::Concat(a, b))
    }

    pub fn scores(&mut self, query: NodeId, keys: &[NodeId]) -> NodeId {
        let q = &self.nodes[query].value;
        let value = keys
            .iter()
            .map(|&k| self.nodes[k].value.iter().zip(q).fold(T::zero(), |acc, (&a, &b)| acc + a * b))
            .collect();
        self.push(value, Op::Scores { query, keys: keys.to_vec() })
    }

    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let value = softmax(&self.nodes[a].value);
        self.push(value, Op::Softmax(a))
    }

    pub fn mix(&mut self, weights: NodeId, values: &[NodeId]) -> NodeId {
        let w = &self.nodes[weights].value;
        let dim = self.nodes[values[0]].value.len();
        let mut out = vec![T::zero(); dim];
        for (&wj, &v) in w.iter().zip(values) {
            for (o, &x) in out.iter_mut().zip(&self.nodes[v].value) {
                *o = *o + wj * x;
            }
        }
        self.push(out, Op::Mix { weights, values: values.to_vec() })
    }

    pub fn cross_entropy(&mut self, logits: NodeId, target: usize, weight: T) -> NodeId {
        let l = &self.nodes[logits].value;
        let loss = weight * (log_sum_exp(l) - l[target]);
        self.push(vec![loss], Op::CrossEntropy { logits, target, weight })
    }

    pub fn sum(&mut self, terms: &[NodeId]) -> NodeId {
        let total = terms.iter().fold(T::zero(), |acc, &t| acc + self.nodes[t].value[0]);
        self.push(vec![total], Op::Sum(terms.to_vec()))
    }

    pub fn scale(&mut self, a: NodeId, factor: T) -> NodeId {
        let value = self.nodes[a].value.iter().map(|&x| x * factor).collect();
        self.push(value, Op::Scale(a, factor))
    }

    /// Gradient of scalar node `output` with respect to every parameter.
    pub fn backward(&self, output: NodeId) -> Vec<T> {
        let mut grad = vec![T::zero(); self.params.len()];
        let mut adj: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        adj[output] = Some(vec![T::one(); self.nodes[output].value.len()]);

        fn acc<T: Scalar>(adj: &mut [Option<Vec<T>>], id: NodeId, len: usize) -> &mut Vec<T> {
            adj[id].get_or_insert_with(|| vec![T::zero(); len])
        }

        for id in (0..=output).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &self.nodes[id];
            let len_of = |n: NodeId| self.nodes[n].value.len();
            match &node.op {
                Op::Input => {}
                Op::Param { offset } => {
                    for (p, &gi) in grad[*offset..*offset + g.len()].iter_mut().zip(&g) {
                        *p = *p + gi;
                    }
                }
                Op::MatVec { offset, rows, cols, x } => {
                    let xv = &self.nodes[*x].value;
                    let w = &self.params[*offset..*offset + rows * cols];
                    let gw = &mut grad[*offset..*offset + rows * cols];
                    for (r, &gr) in g.iter().enumerate() {
                        if gr == T::zero() {
                            continue;
                        }
                        for (p, &xc) in gw[r * cols..(r + 1) * cols].iter_mut().zip(xv) {
                            *p = *p + gr * xc;
                        }
                    }
                    let gx = acc(&mut adj, *x, *cols);
                    for (r, &gr) in g.iter().enumerate() {
                        if gr == T::zero() {
                            continue;
                        }
                        for (d, &wc) in gx.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
                            *d = *d + gr * wc;
                        }
                    }
                }
                Op::Add(a, b) => {
                    for n in [*a, *b] {
                        let d = acc(&mut adj, n, g.len());
                        for (d, &gi) in d.iter_mut().zip(&g) {
                            *d = *d + gi;
                        }
                    }
                }
                Op::Sub(a, b) => {
                    let da = acc(&mut adj, *a, g.len());
                    for (d, &gi) in da.iter_mut().zip(&g) {
                        *d = *d + gi;
                    }
                    let db = acc(&mut adj, *b, g.len());
                    for (d, &gi) in db.iter_mut().zip(&g) {
                        *d = *d - gi;
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let da = acc(&mut adj, *a, g.len());
                    for ((d, &gi), &y) in da.iter_mut().zip(&g).zip(vb) {
                        *d = *d + gi * y;
                    }
                    let db = acc(&mut adj, *b, g.len());
                    for ((d, &gi), &x) in db.iter_mut().zip(&g).zip(va) {
                        *d = *d + gi * x;
                    }
                }
                Op::Sigmoid(a) => {
                    let da = acc(&mut adj, *a, g.len());
                    for ((d, &gi), &s) in da.iter_mut().zip(&g).zip(&node.value) {
                        *d = *d + gi * s * (T::one() - s);
                    }
                }
                Op::Tanh(a) => {
                    let da = acc(&mut adj, *a, g.len());
                    for ((d, &gi), &t) in da.iter_mut().zip(&g).zip(&node.value) {
                        *d = *d + gi * (T::one() - t * t);
                    }
                }
                Op::Slice { x, start } => {
                    let n = len_of(*x);
                    let dx = acc(&mut adj, *x, n);
                    for (d, &gi) in dx[*start..*start + g.len()].iter_mut().zip(&g) {
                        *d = *d + gi;
                    }
                }
                Op::Concat(a, b) => {
                    let na = len_of(*a);
                    let nb = len_of(*b);
                    let da = acc(&mut adj, *a, na);
                    for (d, &gi) in da.iter_mut().zip(&g[..na]) {
                        *d = *d + gi;
                    }
                    let db = acc(&mut adj, *b, nb);
                    for (d, &gi) in db.iter_mut().zip(&g[na..]) {
                        *d = *d + gi;
                    }
                }
                Op::Scores { query, keys } => {
                    let q = self.nodes[*query].value.clone();
                    let dim = q.len();
                    let mut dq = vec![T::zero(); dim];
                    for (&gj, &k) in g.iter().zip(keys) {
                        let kv = &self.nodes[k].value;
                        for (d, &kc) in dq.iter_mut().zip(kv) {
                            *d = *d + gj * kc;
                        }
                        let dk = acc(&mut adj, k, dim);
                        for (d, &qc) in dk.iter_mut().zip(&q) {
                            *d = *d + gj * qc;
                        }
                    }
                    let dqa = acc(&mut adj, *query, dim);
                    for (d, v) in dqa.iter_mut().zip(dq) {
                        *d = *d + v;
                    }
                }
                Op::Softmax(a) => {
                    let s = &node.value;
                    let inner = g.iter().zip(s).fold(T::zero(), |acc, (&gi, &si)| acc + gi * si);
                    let da = acc(&mut adj, *a, g.len());
                    for ((d, &gi), &si) in da.iter_mut().zip(&g).zip(s) {
                        *d = *d + si * (gi - inner);
                    }
                }
                Op::Mix { weights, values } => {
                    let w = self.nodes[*weights].value.clone();
                    let mut dw = vec![T::zero(); w.len()];
                    for (j, &v) in values.iter().enumerate() {
                        let vv = &self.nodes[v].value;
                        dw[j] = g.iter().zip(vv).fold(T::zero(), |acc, (&gi, &x)| acc + gi * x);
                        let dv = acc(&mut adj, v, g.len());
                        for (d, &gi) in dv.iter_mut().zip(&g) {
                            *d = *d + w[j] * gi;
                        }
                    }
                    let dwa = acc(&mut adj, *weights, w.len());
                    for (d, v) in dwa.iter_mut().zip(dw) {
                        *d = *d + v;
                    }
                }
                Op::CrossEntropy { logits, target, weight } => {
                    if *weight == T::zero() {
                        continue;
                    }
                    let p = softmax(&self.nodes[*logits].value);
                    let scale = g[0] * *weight;
                    let dl = acc(&mut adj, *logits, p.len());
                    for (i, (d, &pi)) in dl.iter_mut().zip(&p).enumerate() {
                        let onehot = if i == *target { T::one() } else { T::zero() };
                        *d = *d + scale * (pi - onehot);
                    }
                }
                Op::Sum(terms) => {
                    for &t in terms {
                        let dt = acc(&mut adj, t, 1);
                        dt[0] = dt[0] + g[0];
                    }
                }
                Op::Scale(a, factor) => {
                    let da = acc(&mut adj, *a, g.len());
                    for (d, &gi) in da.iter_mut().zip(&g) {
                        *d = *d + gi * *factor;
                    }
                }
            }
        }
        grad
    }
}

pub fn log_sum_exp<T: Scalar>(v: &[T]) -> T {
    let m = v.iter().copied().fold(T::neg_infinity(), T::max);
    m + v.iter().fold(T::zero(), |acc, &x| acc + (x - m).exp()).ln()
}

pub fn softmax<T: Scalar>(v: &[T]) -> Vec<T> {
    let m = v.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = v.iter().map(|&x| (x - m).exp()).collect();
    let z = e.iter().fold(T::zero(), |acc, &x| acc + x);
    e.into_iter().map(|x| x / z).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central-difference check of one scalar function built on the tape.
    fn check(params: &[f64], build: impl Fn(&mut Tape<'_, f64>) -> NodeId) {
        let tape_grad = {
            let mut t = Tape::new(params);
            let out = build(&mut t);
            t.backward(out)
        };
        let h = 1e-6;
        for i in 0..params.len() {
            let mut p = params.to_vec();
            p[i] += h;
            let up = {
                let mut t = Tape::new(&p);
                let o = build(&mut t);
                t.scalar(o)
            };
            p[i] -= 2.0 * h;
            let down = {
                let mut t = Tape::new(&p);
                let o = build(&mut t);
                t.scalar(o)
            };
            let fd = (up - down) / (2.0 * h);
            assert!(
                (fd - tape_grad[i]).abs() <= 1e-6 * (1.0 + fd.abs()),
                "param {i}: fd {fd} vs tape {}",
                tape_grad[i]
            );
        }
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let params: Vec<f64> = (0..16).map(|i| ((i * 7 % 11) as f64 - 5.0) / 7.0).collect();
        check(&params, |t| {
            let x = t.param(0, 3);
            let w = t.matvec(3, 3, 3, x);
            let s = t.sigmoid(w);
            let th = t.tanh(x);
            let m = t.mul(s, th);
            let d = t.sub(m, x);
            let a = t.add(d, s);
            let keys = [a, x, m];
            let sc = t.scores(th, &keys);
            let sm = t.softmax(sc);
            let ctx = t.mix(sm, &keys);
            let cat = t.concat(ctx, a);
            let sl = t.slice(cat, 1, 4);
            let logits = t.scale(sl, 1.5);
            let ce1 = t.cross_entropy(logits, 2, 1.0);
            let b = t.param(12, 4);
            let ce2 = t.cross_entropy(b, 0, 0.5);
            t.sum(&[ce1, ce2])
        });
    }

    #[test]
    fn zero_weight_cross_entropy_has_no_gradient() {
        let params = vec![0.3, -0.2, 0.9];
        let mut t = Tape::new(&params);
        let l = t.param(0, 3);
        let ce = t.cross_entropy(l, 1, 0.0);
        assert_eq!(t.scalar(ce), 0.0);
        assert!(t.backward(ce).iter().all(|&g| g == 0.0));
    }
}
