//! The hybrid attention pattern: image patches and input text form a fully
//! bidirectional prefix; output text attends causally over everything before
//! and including itself.

use std::sync::Arc;

/// Row-major T x T boolean mask, `true` = query row may attend to key column.
/// With prefix length P = n_img + n_in: (q, k) is allowed iff both sit in the
/// prefix, or q is in the suffix and k <= q.
pub fn build_attention_mask(n_img: usize, n_in: usize, n_out: usize) -> Arc<Vec<bool>> {
    let p = n_img + n_in;
    let t = p + n_out;
    let mut mask = vec![false; t * t];
    for q in 0..t {
        for k in 0..t {
            mask[q * t + k] = (q < p && k < p) || (q >= p && k <= q);
        }
    }
    Arc::new(mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(mask: &[bool], t: usize, q: usize) -> Vec<usize> {
        (0..t).filter(|&k| mask[q * t + k]).collect()
    }

    #[test]
    fn prefix_rows_see_the_whole_prefix_and_suffix_rows_are_causal() {
        let m = build_attention_mask(2, 1, 2);
        let t = 5;
        for q in 0..3 {
            assert_eq!(row(&m, t, q), vec![0, 1, 2], "prefix row {q}");
        }
        assert_eq!(row(&m, t, 3), vec![0, 1, 2, 3]);
        assert_eq!(row(&m, t, 4), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn pure_prefix_is_all_true() {
        let n = 4;
        let m = build_attention_mask(3, 1, 0);
        assert!(m.iter().all(|&b| b));
        assert_eq!(m.len(), n * n);
    }

    #[test]
    fn pure_suffix_is_lower_triangular() {
        let n = 5;
        let m = build_attention_mask(0, 0, n);
        for q in 0..n {
            for k in 0..n {
                assert_eq!(m[q * n + k], k <= q, "({q},{k})");
            }
        }
    }

    #[test]
    fn every_row_attends_somewhere_and_prefix_never_sees_suffix() {
        let m = build_attention_mask(3, 2, 4);
        let (p, t) = (5, 9);
        for q in 0..t {
            assert!(!row(&m, t, q).is_empty());
        }
        for q in 0..p {
            assert!(row(&m, t, q).iter().all(|&k| k < p), "prefix row {q} leaks");
        }
    }
}
