//! Token masks marking where a hypothesis departs from another translation.

/// 1 where `hyp[t]` is left unmatched by a longest-common-subsequence
/// alignment with `reference`.
pub fn diff_mask<S: PartialEq>(hyp: &[S], reference: &[S]) -> Vec<u8> {
    let (n, m) = (hyp.len(), reference.len());
    // lcs[i][j]: LCS length of hyp[i..] and reference[j..]
    let mut lcs = vec![vec![0u32; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            lcs[i][j] = if hyp[i] == reference[j] { lcs[i + 1][j + 1] + 1 } else { lcs[i + 1][j].max(lcs[i][j + 1]) };
        }
    }
    let mut mask = vec![1u8; n];
    let (mut i, mut j) = (0, 0);
    while i < n && j < m {
        if hyp[i] == reference[j] && lcs[i][j] == lcs[i + 1][j + 1] + 1 {
            mask[i] = 0;
            i += 1;
            j += 1;
        } else if lcs[i + 1][j] >= lcs[i][j + 1] {
            i += 1;
        } else {
            j += 1;
        }
    }
    mask
}

/// 1 where `hyp[t] != corrected[t]`. Sequences of different length fall
/// back to [`diff_mask`].
pub fn exact_mask<S: PartialEq>(hyp: &[S], corrected: &[S]) -> Vec<u8> {
    if hyp.len() != corrected.len() {
        log::warn!("exact mask: lengths differ ({} vs {}), using the alignment mask", hyp.len(), corrected.len());
        return diff_mask(hyp, corrected);
    }
    hyp.iter().zip(corrected).map(|(a, b)| u8::from(a != b)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn w(s: &str) -> Vec<&str> {
        s.split(' ').collect()
    }

    #[test]
    fn alignment_mask_examples() {
        assert_eq!(diff_mask(&w("in august ."), &w("in august .")), vec![0, 0, 0]);
        assert_eq!(diff_mask(&w("a b c"), &w("x y")), vec![1, 1, 1]);
        assert_eq!(diff_mask(&w("in january ."), &w("in august .")), vec![0, 1, 0]);
        assert_eq!(diff_mask(&w("a x b"), &w("a b")), vec![0, 1, 0]);
        assert!(diff_mask::<&str>(&[], &w("a")).is_empty());
    }

    #[test]
    fn positional_mask_examples() {
        assert_eq!(exact_mask(&w("a b c"), &w("a b c")), vec![0, 0, 0]);
        let hyp = w("the man goes in january .");
        let fixed = w("the man goes in august .");
        assert_eq!(exact_mask(&hyp, &fixed), vec![0, 0, 0, 0, 1, 0]);
        let hyp = w("on 3 january moves .");
        let fixed = w("on 3 august moves .");
        assert_eq!(exact_mask(&hyp, &fixed), vec![0, 0, 1, 0, 0]);
        // unequal lengths use the alignment
        assert_eq!(exact_mask(&w("a x b"), &w("a b")), vec![0, 1, 0]);
    }

    fn lcs_len(a: &[u8], b: &[u8]) -> usize {
        if a.is_empty() || b.is_empty() {
            return 0;
        }
        if a[0] == b[0] {
            1 + lcs_len(&a[1..], &b[1..])
        } else {
            lcs_len(&a[1..], b).max(lcs_len(a, &b[1..]))
        }
    }

    proptest! {
        #[test]
        fn unmasked_tokens_form_a_longest_common_subsequence(
            hyp in proptest::collection::vec(0u8..4, 0..8),
            reference in proptest::collection::vec(0u8..4, 0..8),
        ) {
            let mask = diff_mask(&hyp, &reference);
            let kept: Vec<u8> = hyp.iter().zip(&mask).filter(|(_, &m)| m == 0).map(|(&t, _)| t).collect();
            prop_assert_eq!(kept.len(), lcs_len(&hyp, &reference));
            prop_assert_eq!(lcs_len(&kept, &reference), kept.len());
        }

        #[test]
        fn exact_mask_is_within_alignment_mask_for_single_substitutions(
            base in proptest::collection::vec(0u8..6, 1..8),
            at in 0usize..8,
        ) {
            // hyp carries a wrong token (9) where corrected and reference agree
            let at = at % base.len();
            let mut hyp = base.clone();
            hyp[at] = 9;
            let exact = exact_mask(&hyp, &base);
            let diff = diff_mask(&hyp, &base);
            prop_assert!(exact.iter().zip(&diff).all(|(e, d)| e <= d));
        }
    }
}
