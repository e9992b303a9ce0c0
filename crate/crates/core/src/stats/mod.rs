//! Listening-test statistics: means with 95% intervals, paired t-tests,
//! AXY accuracy and preference proportions.

pub mod special;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use special::{student_t_cdf, student_t_quantile, student_t_two_tailed};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("no values")]
    Empty,
    #[error("paired samples differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("paired t-test needs at least 2 pairs, got {0}")]
    TooFewPairs(usize),
    #[error("option index {index} outside 0..{k}")]
    OptionOutOfRange { index: usize, k: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub n: usize,
    pub mean: f64,
    pub ci95_halfwidth: f64,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation with the n-1 denominator.
fn sample_std(xs: &[f64], m: f64) -> f64 {
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Mean and Student-t 95% half-width `t(0.975, n-1) * s / sqrt(n)`.
pub fn mean_ci95(values: &[f64]) -> Result<StatsSummary, StatsError> {
    if values.is_empty() {
        return Err(StatsError::Empty);
    }
    let n = values.len();
    let m = mean(values);
    let half = if n == 1 {
        0.0
    } else {
        let s = sample_std(values, m);
        if s == 0.0 {
            0.0
        } else {
            student_t_quantile(0.975, (n - 1) as f64) * s / (n as f64).sqrt()
        }
    };
    Ok(StatsSummary {
        n,
        mean: m,
        ci95_halfwidth: half,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTTest {
    pub n: usize,
    pub mean_difference: f64,
    pub t: f64,
    /// Two-tailed.
    pub p: f64,
    pub significant: bool,
}

/// Paired t-test on `a - b`.
///
/// All-zero differences give t = 0, p = 1. Constant non-zero differences
/// give an infinite t and p = 0.
pub fn paired_t_test(a: &[f64], b: &[f64], alpha: f64) -> Result<PairedTTest, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Err(StatsError::TooFewPairs(n));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let md = mean(&d);
    let sd = sample_std(&d, md);
    let (t, p) = if sd == 0.0 {
        if md == 0.0 {
            (0.0, 1.0)
        } else {
            (md.signum() * f64::INFINITY, 0.0)
        }
    } else {
        let t = md / (sd / (n as f64).sqrt());
        (t, student_t_two_tailed(t, (n - 1) as f64))
    };
    Ok(PairedTTest {
        n,
        mean_difference: md,
        t,
        p,
        significant: p < alpha,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AxyChoice {
    X,
    Y,
}

/// Fraction of responses naming X, the target speaker.
pub fn axy_accuracy(responses: &[AxyChoice]) -> Result<f64, StatsError> {
    if responses.is_empty() {
        return Err(StatsError::Empty);
    }
    let hits = responses.iter().filter(|&&c| c == AxyChoice::X).count();
    Ok(hits as f64 / responses.len() as f64)
}

/// Share of responses per option.
pub fn preference_proportions(responses: &[usize], k: usize) -> Result<Vec<f64>, StatsError> {
    if responses.is_empty() {
        return Err(StatsError::Empty);
    }
    let mut counts = vec![0usize; k];
    for &index in responses {
        *counts
            .get_mut(index)
            .ok_or(StatsError::OptionOutOfRange { index, k })? += 1;
    }
    let n = responses.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / n).collect())
}
