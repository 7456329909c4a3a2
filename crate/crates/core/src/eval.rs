//! WinPR@k segmentation scoring.
//!
//! For a sequence of `N` positions and window size `k`, windows start at every
//! `i` in `[1-k, N-1]` and cover positions `[i, i+k-1]` clipped to the
//! sequence, so each position is covered by exactly `k` windows. With `R_i`
//! and `C_i` the reference and hypothesis boundary counts inside window `i`:
//! `tp = sum min(R_i, C_i)`, `fp = sum max(0, C_i - R_i)`,
//! `fn = sum max(0, R_i - C_i)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WinPRResult {
    pub tp: f64,
    pub fp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub k: usize,
}

impl WinPRResult {
    /// Derives precision, recall and F1 from window counts.
    ///
    /// Degenerate cases: no boundaries on either side scores 1/1/1; a missing
    /// side (only reference or only hypothesis boundaries) scores 0/0/0.
    pub fn from_counts(tp: f64, fp: f64, fn_: f64, k: usize) -> Self {
        let (precision, recall) = if tp + fp == 0.0 && tp + fn_ == 0.0 {
            (1.0, 1.0)
        } else {
            let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let r = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
            (p, r)
        };
        Self {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1: f1_of(precision, recall),
            k,
        }
    }
}

pub fn f1_of(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

fn check(reference: &[bool], hypothesis: &[bool], k: usize) -> Result<()> {
    if reference.len() != hypothesis.len() {
        return Err(Error::dim(format!(
            "reference has {} positions, hypothesis {}",
            reference.len(),
            hypothesis.len()
        )));
    }
    if k < 1 {
        return Err(Error::invalid("window size k must be at least 1"));
    }
    Ok(())
}

/// WinPR@k in O(N + k) using prefix sums.
pub fn winpr(reference: &[bool], hypothesis: &[bool], k: usize) -> Result<WinPRResult> {
    check(reference, hypothesis, k)?;
    let n = reference.len() as isize;
    let prefix = |v: &[bool]| -> Vec<i64> {
        let mut p = Vec::with_capacity(v.len() + 1);
        p.push(0);
        for &b in v {
            p.push(p.last().unwrap() + b as i64);
        }
        p
    };
    let (pr, ph) = (prefix(reference), prefix(hypothesis));
    let (mut tp, mut fp, mut fn_) = (0i64, 0i64, 0i64);
    for i in (1 - k as isize)..n {
        let lo = i.max(0) as usize;
        let hi = (i + k as isize).min(n) as usize;
        let r = pr[hi] - pr[lo];
        let c = ph[hi] - ph[lo];
        tp += r.min(c);
        fp += (c - r).max(0);
        fn_ += (r - c).max(0);
    }
    Ok(WinPRResult::from_counts(tp as f64, fp as f64, fn_ as f64, k))
}

/// Brute-force WinPR@k: materializes every window as an explicit index set.
/// Intended for verification on short sequences.
pub fn winpr_oracle(reference: &[bool], hypothesis: &[bool], k: usize) -> Result<WinPRResult> {
    check(reference, hypothesis, k)?;
    let n = reference.len() as isize;
    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    let mut start = 1 - k as isize;
    while start < n {
        let window: Vec<usize> = (start..start + k as isize)
            .filter(|&p| p >= 0 && p < n)
            .map(|p| p as usize)
            .collect();
        let mut r = 0.0;
        let mut c = 0.0;
        for &p in &window {
            if reference[p] {
                r += 1.0;
            }
            if hypothesis[p] {
                c += 1.0;
            }
        }
        if r < c {
            tp += r;
            fp += c - r;
        } else {
            tp += c;
            fn_ += r - c;
        }
        start += 1;
    }
    Ok(WinPRResult::from_counts(tp, fp, fn_, k))
}

/// Per-show scores plus their unweighted (macro) mean.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorpusEval {
    pub per_show: Vec<WinPRResult>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn evaluate_corpus(
    predictions: &[Vec<bool>],
    references: &[Vec<bool>],
    k: usize,
) -> Result<CorpusEval> {
    if predictions.is_empty() {
        return Err(Error::Empty("no shows to evaluate".into()));
    }
    if predictions.len() != references.len() {
        return Err(Error::dim(format!(
            "{} predictions for {} references",
            predictions.len(),
            references.len()
        )));
    }
    let mut per_show = Vec::with_capacity(predictions.len());
    for (i, (p, r)) in predictions.iter().zip(references).enumerate() {
        if r.is_empty() {
            return Err(Error::Empty(format!("show {i} has no tokens")));
        }
        per_show.push(winpr(r, p, k)?);
    }
    Ok(macro_average(per_show))
}

pub fn macro_average(per_show: Vec<WinPRResult>) -> CorpusEval {
    let n = per_show.len() as f64;
    let mean = |f: fn(&WinPRResult) -> f64| per_show.iter().map(f).sum::<f64>() / n;
    CorpusEval {
        precision: mean(|r| r.precision),
        recall: mean(|r| r.recall),
        f1: mean(|r| r.f1),
        per_show,
    }
}

/// Relative change of `method_f1` over `baseline_f1`, in percent.
pub fn improvement(baseline_f1: f64, method_f1: f64) -> Result<f64> {
    if baseline_f1 <= 0.0 || baseline_f1.is_nan() {
        return Err(Error::invalid("baseline F1 must be positive"));
    }
    Ok(100.0 * (method_f1 - baseline_f1) / baseline_f1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn at(n: usize, positions: &[usize]) -> Vec<bool> {
        let mut v = vec![false; n];
        positions.iter().for_each(|&p| v[p] = true);
        v
    }

    #[test]
    fn identical_sequences_are_perfect() {
        let r = at(40, &[5, 17, 30]);
        let s = winpr(&r, &r, 10).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn near_miss_by_one() {
        let r = at(50, &[20]);
        let h = at(50, &[21]);
        let s = winpr(&r, &h, 10).unwrap();
        assert_eq!((s.tp, s.fp, s.fn_), (9.0, 1.0, 1.0));
        assert!((s.precision - 0.9).abs() < 1e-12);
        assert!((s.recall - 0.9).abs() < 1e-12);
        assert!((s.f1 - 0.9).abs() < 1e-12);
    }

    #[test]
    fn degenerate_conventions() {
        let r = at(20, &[4]);
        let none = vec![false; 20];
        let s = winpr(&r, &none, 5).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
        let s = winpr(&none, &r, 5).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
        let s = winpr_oracle(&none, &none, 5).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn errors() {
        assert!(matches!(winpr(&[true], &[true, false], 3), Err(Error::Dimension(_))));
        assert!(matches!(winpr(&[true], &[true], 0), Err(Error::InvalidArgument(_))));
        assert!(winpr_oracle(&[true], &[true], 0).is_err());
    }

    #[test]
    fn k1_is_exact_matching() {
        let r = at(12, &[1, 4, 7, 9]);
        let h = at(12, &[1, 5, 7, 11]);
        let s = winpr(&r, &h, 1).unwrap();
        assert_eq!(s.tp, 2.0);
    }

    #[test]
    fn corpus_macro_average() {
        let r = vec![at(30, &[10]), at(30, &[10])];
        let perfect = evaluate_corpus(&r, &r, 10).unwrap();
        assert_eq!((perfect.precision, perfect.recall, perfect.f1), (1.0, 1.0, 1.0));
        let single = evaluate_corpus(&r[..1], &r[..1], 10).unwrap();
        assert_eq!(single.f1, single.per_show[0].f1);

        let a = WinPRResult::from_counts(2.0, 3.0, 3.0, 10); // F1 0.4
        let b = WinPRResult::from_counts(4.0, 1.0, 1.0, 10); // F1 0.8
        let m = macro_average(vec![a, b]);
        assert!((m.f1 - 0.6).abs() < 1e-12);
        assert!(evaluate_corpus(&[], &[], 10).is_err());
        assert!(evaluate_corpus(&[vec![]], &[vec![]], 10).is_err());
    }

    #[test]
    fn improvement_values() {
        assert!((improvement(0.615, 0.813).unwrap() - 32.3).abs() <= 0.2);
        assert!((improvement(0.615, 0.673).unwrap() - 9.4).abs() <= 0.2);
        assert_eq!(improvement(0.5, 0.5).unwrap(), 0.0);
        assert!(improvement(0.0, 0.5).is_err());
    }

    fn seq(max: usize) -> impl Strategy<Value = (Vec<bool>, Vec<bool>, usize)> {
        (1..=max).prop_flat_map(|n| {
            (
                prop::collection::vec(prop::bool::weighted(0.2), n),
                prop::collection::vec(prop::bool::weighted(0.2), n),
                1usize..=12,
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn fast_matches_oracle((r, h, k) in seq(50)) {
            prop_assert_eq!(winpr(&r, &h, k).unwrap(), winpr_oracle(&r, &h, k).unwrap());
        }

        #[test]
        fn swap_exchanges_precision_and_recall((r, h, k) in seq(50)) {
            let a = winpr(&r, &h, k).unwrap();
            let b = winpr(&h, &r, k).unwrap();
            prop_assert_eq!(a.tp, b.tp);
            prop_assert_eq!(a.precision, b.recall);
            prop_assert_eq!(a.recall, b.precision);
        }

        #[test]
        fn stored_f1_consistent((r, h, k) in seq(50)) {
            let s = winpr(&r, &h, k).unwrap();
            prop_assert!((s.f1 - f1_of(s.precision, s.recall)).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&s.precision) && (0.0..=1.0).contains(&s.recall));
        }

        #[test]
        fn wider_window_forgives_shift(n in 20usize..60, p in 5usize..10, d in 1usize..8, k in 1usize..12) {
            let r = at(n, &[p]);
            let h = at(n, &[p + d]);
            let narrow = winpr(&r, &h, k).unwrap();
            let wide = winpr(&r, &h, k + 1).unwrap();
            prop_assert!(wide.f1 >= narrow.f1);
        }
    }

    #[test]
    fn shift_law() {
        for k in 1..=12usize {
            for d in 0..=k {
                let r = at(60, &[25]);
                let h = at(60, &[25 + d]);
                let s = winpr(&r, &h, k).unwrap();
                let o = winpr_oracle(&r, &h, k).unwrap();
                let want = (k - d) as f64 / k as f64;
                assert!((s.precision - want).abs() < 1e-12 && (s.recall - want).abs() < 1e-12);
                assert_eq!(s, o);
            }
        }
    }
}
