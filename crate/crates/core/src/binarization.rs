//! High/low labelling of raw semantic-entropy scores.
//!
//! The best split picks the threshold that minimizes the summed
//! within-class squared deviation, the same criterion a regression tree uses
//! for a single split. Candidates are the midpoints between consecutive
//! distinct values; the objective is constant between data points so nothing
//! is lost, and no value can sit exactly on a threshold.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SplitError {
    #[error("need at least two distinct values to split")]
    DegenerateInput,
    #[error("non-finite value for {0:?}")]
    NonFinite(String),
    #[error("threshold {0} leaves a class empty")]
    EmptyClass(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub gamma_star: f64,
    pub objective_value: f64,
    /// 1 = high entropy (`value > gamma_star`).
    pub labels: BTreeMap<String, u8>,
    pub class_means: (f64, f64),
    pub class_sizes: (usize, usize),
}

impl SplitResult {
    pub fn label_of(&self, value: f64) -> u8 {
        u8::from(value > self.gamma_star)
    }
}

fn check_finite(values: &[(String, f64)]) -> Result<(), SplitError> {
    match values.iter().find(|(_, v)| !v.is_finite()) {
        Some((id, _)) => Err(SplitError::NonFinite(id.clone())),
        None => Ok(()),
    }
}

/// Direct two-pass SSE around the mean.
fn sse(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64, usize) {
    let (sum, n) = xs.clone().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        return (0.0, 0.0, 0);
    }
    let mean = sum / n as f64;
    (xs.map(|x| (x - mean) * (x - mean)).sum(), mean, n)
}

/// Objective and class statistics at threshold `gamma` (low: `v < gamma`,
/// high: `v >= gamma`).
pub fn split_objective(values: &[f64], gamma: f64) -> Result<(f64, (f64, f64), (usize, usize)), SplitError> {
    let low = values.iter().copied().filter(|v| *v < gamma);
    let high = values.iter().copied().filter(|v| *v >= gamma);
    let (sl, ml, nl) = sse(low);
    let (sh, mh, nh) = sse(high);
    if nl == 0 || nh == 0 {
        return Err(SplitError::EmptyClass(gamma));
    }
    Ok((sl + sh, (ml, mh), (nl, nh)))
}

fn finish(values: &[(String, f64)], gamma: f64) -> Result<SplitResult, SplitError> {
    let raw: Vec<f64> = values.iter().map(|(_, v)| *v).collect();
    let (objective_value, class_means, class_sizes) = split_objective(&raw, gamma)?;
    let labels = values
        .iter()
        .map(|(id, v)| (id.clone(), u8::from(*v > gamma)))
        .collect();
    Ok(SplitResult {
        gamma_star: gamma,
        objective_value,
        labels,
        class_means,
        class_sizes,
    })
}

/// Best split via prefix sums over the sorted values, O(n log n).
pub fn best_split(values: &[(String, f64)]) -> Result<SplitResult, SplitError> {
    check_finite(values)?;
    let mut sorted: Vec<f64> = values.iter().map(|(_, v)| *v).collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n < 2 || sorted[0] == sorted[n - 1] {
        return Err(SplitError::DegenerateInput);
    }
    // Centering keeps the prefix-sum SSE formula well conditioned.
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = sorted.iter().map(|v| v - mean).collect();
    let total_sq: f64 = centered.iter().map(|c| c * c).sum();
    let total: f64 = centered.iter().sum();

    let mut candidates: Vec<(f64, f64)> = Vec::new();
    let (mut s, mut sq) = (0.0, 0.0);
    for i in 0..n - 1 {
        s += centered[i];
        sq += centered[i] * centered[i];
        if sorted[i] == sorted[i + 1] {
            continue;
        }
        let nl = (i + 1) as f64;
        let nh = (n - i - 1) as f64;
        let sh = total - s;
        let sqh = total_sq - sq;
        let obj = (sq - s * s / nl) + (sqh - sh * sh / nh);
        let gamma = sorted[i] + (sorted[i + 1] - sorted[i]) / 2.0;
        candidates.push((gamma, obj));
    }
    let min = candidates
        .iter()
        .map(|(_, o)| *o)
        .fold(f64::INFINITY, f64::min);
    // Candidates within rounding of the minimum are re-scored directly and
    // the smallest threshold wins among exact ties.
    let tol = 1e-9 * total_sq.max(f64::MIN_POSITIVE);
    let raw: Vec<f64> = values.iter().map(|(_, v)| *v).collect();
    let mut best: Option<(f64, f64)> = None;
    for (gamma, obj) in candidates {
        if obj > min + tol {
            continue;
        }
        let direct = split_objective(&raw, gamma)?.0;
        let better = match best {
            None => true,
            Some((_, b)) => direct < b - 1e-12 * total_sq,
        };
        if better {
            best = Some((gamma, direct));
        }
    }
    let (gamma, _) = best.ok_or(SplitError::DegenerateInput)?;
    finish(values, gamma)
}

/// Median split: `gamma` is the middle order statistic, or the midpoint of
/// the two middle ones for even n. Ties at the median can unbalance classes.
pub fn even_split(values: &[(String, f64)]) -> Result<SplitResult, SplitError> {
    check_finite(values)?;
    let mut sorted: Vec<f64> = values.iter().map(|(_, v)| *v).collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n < 2 || sorted[0] == sorted[n - 1] {
        return Err(SplitError::DegenerateInput);
    }
    let gamma = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        let (a, b) = (sorted[n / 2 - 1], sorted[n / 2]);
        a + (b - a) / 2.0
    };
    let labels: BTreeMap<String, u8> = values
        .iter()
        .map(|(id, v)| (id.clone(), u8::from(*v > gamma)))
        .collect();
    let low: Vec<f64> = values.iter().map(|(_, v)| *v).filter(|v| *v <= gamma).collect();
    let high: Vec<f64> = values.iter().map(|(_, v)| *v).filter(|v| *v > gamma).collect();
    if high.is_empty() {
        return Err(SplitError::DegenerateInput);
    }
    let (sl, ml, nl) = sse(low.iter().copied());
    let (sh, mh, nh) = sse(high.iter().copied());
    Ok(SplitResult {
        gamma_star: gamma,
        objective_value: sl + sh,
        labels,
        class_means: (ml, mh),
        class_sizes: (nl, nh),
    })
}

/// Objective at each requested threshold; thresholds that empty a class are
/// reported as errors in place.
pub fn objective_curve(values: &[f64], gammas: &[f64]) -> Vec<(f64, Result<f64, SplitError>)> {
    gammas
        .iter()
        .map(|&g| (g, split_objective(values, g).map(|(o, _, _)| o)))
        .collect()
}
