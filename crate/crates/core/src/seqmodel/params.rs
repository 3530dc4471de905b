//! Flat parameter storage partitioned into named network components.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Network component addressable by influence selectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Component {
    #[serde(rename = "srcEmb")]
    SrcEmb,
    #[serde(rename = "trgEmb")]
    TrgEmb,
    #[serde(rename = "encoder")]
    Encoder,
    #[serde(rename = "decoder")]
    Decoder,
    #[serde(rename = "output")]
    Output,
}

impl Component {
    pub const ALL: [Component; 5] =
        [Component::SrcEmb, Component::TrgEmb, Component::Encoder, Component::Decoder, Component::Output];

    pub fn name(self) -> &'static str {
        match self {
            Component::SrcEmb => "srcEmb",
            Component::TrgEmb => "trgEmb",
            Component::Encoder => "encoder",
            Component::Decoder => "decoder",
            Component::Output => "output",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Component {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Component::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| format!("unknown component `{s}`"))
    }
}

/// One row of the component layout table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ComponentSpan {
    pub name: Component,
    pub offset: usize,
    pub length: usize,
}

impl ComponentSpan {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.length
    }
}

/// Component layout table. Spans appear in [`Component::ALL`] order; under
/// tying the `output` span aliases the `trgEmb` span.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Layout {
    pub spans: Vec<ComponentSpan>,
    pub total: usize,
}

impl Layout {
    pub fn new(spans: Vec<ComponentSpan>, total: usize) -> Result<Self> {
        let layout = Layout { spans, total };
        layout.check()?;
        Ok(layout)
    }

    fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::IncompatibleGradient(m));
        if self.spans.len() != Component::ALL.len() {
            return bad(format!("layout has {} spans, expected 5", self.spans.len()));
        }
        let mut cursor = 0;
        for (span, expected) in self.spans.iter().zip(Component::ALL) {
            if span.name != expected {
                return bad(format!("span {} out of order", span.name));
            }
            if self.is_alias(span.name) {
                continue;
            }
            if span.offset != cursor {
                return bad(format!("span {} does not start at {cursor}", span.name));
            }
            cursor += span.length;
        }
        if cursor != self.total {
            return bad(format!("spans cover {cursor} of {} entries", self.total));
        }
        Ok(())
    }

    pub fn span(&self, c: Component) -> ComponentSpan {
        self.spans[c.index()]
    }

    pub fn tied(&self) -> bool {
        self.span(Component::Output).range() == self.span(Component::TrgEmb).range()
    }

    /// True when `c` resolves to storage already owned by an earlier span.
    pub fn is_alias(&self, c: Component) -> bool {
        c == Component::Output && self.tied()
    }

    /// Spans owning distinct storage, in layout order.
    pub fn unique_spans(&self) -> impl Iterator<Item = ComponentSpan> + '_ {
        self.spans.iter().copied().filter(|s| !self.is_alias(s.name))
    }
}

/// Parameter values with their component layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet<T = f32> {
    pub layout: Arc<Layout>,
    pub values: Vec<T>,
}

impl<T: Copy> ParameterSet<T> {
    pub fn slice(&self, c: Component) -> &[T] {
        &self.values[self.layout.span(c).range()]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl ParameterSet<f32> {
    pub fn to_f64(&self) -> ParameterSet<f64> {
        ParameterSet { layout: self.layout.clone(), values: self.values.iter().map(|&v| v as f64).collect() }
    }
}

/// Where a gradient came from.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GradientOrigin {
    pub example_id: u64,
    pub epoch: u32,
    pub mask_id: Option<String>,
}

/// Per-example loss gradient stored flat with the parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    pub layout: Arc<Layout>,
    pub data: Vec<f32>,
    pub origin: GradientOrigin,
}

impl GradientVector {
    pub fn new(layout: Arc<Layout>, data: Vec<f32>, origin: GradientOrigin) -> Result<Self> {
        if data.len() != layout.total {
            return Err(Error::IncompatibleGradient(format!(
                "gradient has {} entries, layout expects {}",
                data.len(),
                layout.total
            )));
        }
        for span in layout.unique_spans() {
            if data[span.range()].iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericOverflow { component: span.name.to_string() });
            }
        }
        Ok(GradientVector { layout, data, origin })
    }

    pub fn zeros(layout: Arc<Layout>, origin: GradientOrigin) -> Self {
        let data = vec![0.0; layout.total];
        GradientVector { layout, data, origin }
    }

    pub fn slice(&self, c: Component) -> &[f32] {
        &self.data[self.layout.span(c).range()]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn check_compatible(&self, other: &GradientVector) -> Result<()> {
        if self.layout != other.layout {
            return Err(Error::IncompatibleGradient("component layout tables differ".into()));
        }
        Ok(())
    }

    /// Elementwise `self - other`.
    pub fn difference(&self, other: &GradientVector) -> Result<GradientVector> {
        self.check_compatible(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(GradientVector { layout: self.layout.clone(), data, origin: self.origin.clone() })
    }

    pub fn scaled(&self, factor: f32) -> GradientVector {
        GradientVector {
            layout: self.layout.clone(),
            data: self.data.iter().map(|v| v * factor).collect(),
            origin: self.origin.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout(tied: bool) -> Layout {
        let mut spans = vec![
            ComponentSpan { name: Component::SrcEmb, offset: 0, length: 4 },
            ComponentSpan { name: Component::TrgEmb, offset: 4, length: 3 },
            ComponentSpan { name: Component::Encoder, offset: 7, length: 5 },
            ComponentSpan { name: Component::Decoder, offset: 12, length: 2 },
        ];
        if tied {
            spans.push(ComponentSpan { name: Component::Output, offset: 4, length: 3 });
            Layout::new(spans, 14).unwrap()
        } else {
            spans.push(ComponentSpan { name: Component::Output, offset: 14, length: 3 });
            Layout::new(spans, 17).unwrap()
        }
    }

    #[test]
    fn partition_reconstructs_full_vector() {
        for tied in [false, true] {
            let l = Arc::new(layout(tied));
            let data: Vec<f32> = (0..l.total).map(|i| i as f32).collect();
            let g = GradientVector::new(l.clone(), data.clone(), Default::default()).unwrap();
            let joined: Vec<f32> = l.unique_spans().flat_map(|s| g.data[s.range()].to_vec()).collect();
            assert_eq!(joined, data);
            if tied {
                assert_eq!(g.slice(Component::Output), g.slice(Component::TrgEmb));
            }
        }
    }

    #[test]
    fn rejects_gaps_and_wrong_totals() {
        let spans = layout(false).spans;
        assert!(Layout::new(spans.clone(), 16).is_err());
        let mut gap = spans;
        gap[2].offset = 8;
        assert!(Layout::new(gap, 17).is_err());
    }

    #[test]
    fn non_finite_gradient_names_component() {
        let l = Arc::new(layout(false));
        let mut data = vec![0.0; l.total];
        data[8] = f32::NAN;
        match GradientVector::new(l, data, Default::default()) {
            Err(Error::NumericOverflow { component }) => assert_eq!(component, "encoder"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
