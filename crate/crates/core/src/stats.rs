//! Rank-based significance tests over per-show scores.
//!
//! Blocks are shows and observations are per-show F1. The omnibus test uses
//! globally ranked, block-aligned scores; the post-hoc comparison against a
//! control uses classic within-block ranks with rank 1 for the best score.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Significance thresholds applied to Bonferroni-adjusted p values.
pub const ALPHA_LEVELS: [f64; 2] = [0.02, 0.01];

/// `scores[i][j]`: block `i`, method `j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub methods: Vec<String>,
    pub blocks: Vec<String>,
    pub scores: Vec<Vec<f64>>,
}

impl ScoreTable {
    pub fn new(methods: Vec<String>, blocks: Vec<String>, scores: Vec<Vec<f64>>) -> Result<Self> {
        let t = Self {
            methods,
            blocks,
            scores,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn kappa(&self) -> usize {
        self.methods.len()
    }

    pub fn n(&self) -> usize {
        self.blocks.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.kappa() < 2 {
            return Err(Error::invalid("score table needs at least 2 methods"));
        }
        if self.n() < 2 {
            return Err(Error::invalid("score table needs at least 2 blocks"));
        }
        if self.scores.len() != self.n() {
            return Err(Error::dim(format!(
                "{} score rows for {} blocks",
                self.scores.len(),
                self.n()
            )));
        }
        for (i, row) in self.scores.iter().enumerate() {
            if row.len() != self.kappa() {
                return Err(Error::dim(format!(
                    "block {} has {} scores for {} methods",
                    self.blocks[i],
                    row.len(),
                    self.kappa()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("score in block {}", self.blocks[i])));
            }
        }
        Ok(())
    }

    pub fn method_index(&self, label: &str) -> Result<usize> {
        self.methods
            .iter()
            .position(|m| m == label)
            .ok_or_else(|| Error::invalid(format!("method {label:?} not in score table")))
    }
}

/// 1-based ranks in ascending order of `values`; tied values share the mean of
/// the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j hold ranks i+1..=j
        let mean = (i + 1 + j) as f64 / 2.0;
        for &o in &order[i..j] {
            ranks[o] = mean;
        }
        i = j;
    }
    ranks
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmnibusResult {
    pub statistic: f64,
    pub df: usize,
    pub p: f64,
    /// Aligned rank sum per method.
    pub method_rank_sums: Vec<f64>,
    /// Aligned rank sum per block.
    pub block_rank_sums: Vec<f64>,
}

/// Friedman aligned-ranks omnibus test.
pub fn friedman_aligned_ranks(t: &ScoreTable) -> Result<OmnibusResult> {
    t.validate()?;
    let (k, n) = (t.kappa(), t.n());
    let aligned: Vec<f64> = t
        .scores
        .iter()
        .flat_map(|row| {
            let constant = row.iter().all(|&v| v == row[0]);
            let mean = row.iter().sum::<f64>() / k as f64;
            // constant rows align to exact zeros, not rounding residue
            row.iter().map(move |v| if constant { 0.0 } else { v - mean })
        })
        .collect();
    if aligned.iter().all(|&a| a == 0.0) {
        return Err(Error::Degenerate(
            "every block has identical scores across methods".into(),
        ));
    }
    let ranks = average_ranks(&aligned);
    let mut r_method = vec![0.0; k];
    let mut r_block = vec![0.0; n];
    for i in 0..n {
        for j in 0..k {
            let r = ranks[i * k + j];
            r_method[j] += r;
            r_block[i] += r;
        }
    }
    let kn = (k * n) as f64;
    let total = kn * (kn + 1.0) / 2.0;
    let sm: f64 = r_method.iter().sum();
    let sb: f64 = r_block.iter().sum();
    assert!(
        (sm - total).abs() <= 1e-9 * total && (sb - total).abs() <= 1e-9 * total,
        "aligned rank sums {sm} / {sb} differ from {total}"
    );
    let (kf, nf) = (k as f64, n as f64);
    let num = (kf - 1.0)
        * (r_method.iter().map(|r| r * r).sum::<f64>()
            - (kf * nf * nf / 4.0) * (kn + 1.0) * (kn + 1.0));
    let den = kn * (kn + 1.0) * (2.0 * kn + 1.0) / 6.0
        - r_block.iter().map(|r| r * r).sum::<f64>() / kf;
    if den <= 0.0 {
        return Err(Error::Degenerate("aligned-rank variance is zero".into()));
    }
    let statistic = num / den;
    let df = k - 1;
    let p = (1.0 - chi_square_cdf(statistic.max(0.0), df)?).clamp(0.0, 1.0);
    Ok(OmnibusResult {
        statistic,
        df,
        p,
        method_rank_sums: r_method,
        block_rank_sums: r_block,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PostHocRow {
    pub method: String,
    pub avg_rank: f64,
    pub z: f64,
    pub p_raw: f64,
    pub p_adjusted: f64,
    pub significant_at: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PostHocResult {
    pub baseline: String,
    pub baseline_avg_rank: f64,
    pub rows: Vec<PostHocRow>,
}

/// Mean within-block ranks, rank 1 = highest score.
pub fn friedman_average_ranks(t: &ScoreTable) -> Vec<f64> {
    let k = t.kappa();
    let mut sums = vec![0.0; k];
    for row in &t.scores {
        let neg: Vec<f64> = row.iter().map(|v| -v).collect();
        for (s, r) in sums.iter_mut().zip(average_ranks(&neg)) {
            *s += r;
        }
    }
    sums.iter().map(|s| s / t.n() as f64).collect()
}

/// Standard normal upper tail, `1 - Phi(z)`.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// Bonferroni-Dunn comparisons of every method against `baseline`.
/// Positive `z` means the method ranks better than the baseline.
pub fn bonferroni_dunn(t: &ScoreTable, baseline: &str, alpha_levels: &[f64]) -> Result<PostHocResult> {
    t.validate()?;
    let b = t.method_index(baseline)?;
    let (k, n) = (t.kappa() as f64, t.n() as f64);
    let avg = friedman_average_ranks(t);
    let se = (k * (k + 1.0) / (6.0 * n)).sqrt();
    let rows = (0..t.kappa())
        .filter(|&j| j != b)
        .map(|j| {
            let z = (avg[b] - avg[j]) / se;
            let p_raw = (2.0 * normal_sf(z.abs())).min(1.0);
            let p_adjusted = (p_raw * (k - 1.0)).min(1.0);
            PostHocRow {
                method: t.methods[j].clone(),
                avg_rank: avg[j],
                z,
                p_raw,
                p_adjusted,
                significant_at: alpha_levels.iter().copied().filter(|&a| p_adjusted < a).collect(),
            }
        })
        .collect();
    Ok(PostHocResult {
        baseline: baseline.to_string(),
        baseline_avg_rank: avg[b],
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub omnibus: OmnibusResult,
    pub post_hoc: PostHocResult,
}

pub fn test_report(t: &ScoreTable, baseline: &str) -> Result<TestReport> {
    Ok(TestReport {
        omnibus: friedman_aligned_ranks(t)?,
        post_hoc: bonferroni_dunn(t, baseline, &ALPHA_LEVELS)?,
    })
}

const EPS: f64 = 1e-16;
const MAX_ITER: usize = 10_000;

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn regularized_gamma_p(a: f64, x: f64) -> Result<f64> {
    if x < 0.0 || x.is_nan() {
        return Err(Error::invalid(format!("incomplete gamma at x = {x}")));
    }
    if a <= 0.0 {
        return Err(Error::invalid(format!("incomplete gamma with shape {a}")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    let log_prefix = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..MAX_ITER {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * EPS {
                break;
            }
        }
        Ok((sum * log_prefix.exp()).min(1.0))
    } else {
        // modified Lentz evaluation of the continued fraction for Q(a, x)
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..MAX_ITER {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < EPS {
                break;
            }
        }
        Ok((1.0 - log_prefix.exp() * h).max(0.0))
    }
}

pub fn chi_square_cdf(x: f64, df: usize) -> Result<f64> {
    if df < 1 {
        return Err(Error::invalid("chi-square needs df >= 1"));
    }
    if x < 0.0 {
        return Err(Error::invalid(format!("chi-square CDF at negative x = {x}")));
    }
    regularized_gamma_p(df as f64 / 2.0, x / 2.0)
}
