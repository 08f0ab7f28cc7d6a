//! L2-regularized logistic regression fitted with L-BFGS.
//!
//! Objective over parameters `(w, b)`, labels `y ∈ {-1, +1}`:
//! `0.5·‖w‖² + C·Σ log(1 + exp(-y·(w·x + b)))`. The bias is not penalized.

use serde::{Deserialize, Serialize};

use super::{FeatureSpec, ProbeError, ProbeTarget, Result, TrainingSet};
use crate::par::{self, Execution};

/// Rows per gradient chunk. Fixed so partial sums fold in the same order
/// whatever the thread count.
const CHUNK_ROWS: usize = 128;
const HISTORY: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Inverse regularization strength.
    pub c: f64,
    pub standardize: bool,
    pub max_iter: usize,
    /// Stop once the gradient's max-norm is at most this.
    pub tol: f64,
    pub seed: u64,
    pub exec: Execution,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            c: 1.0,
            standardize: true,
            max_iter: 1000,
            tol: 1e-6,
            seed: 0,
            exec: Execution::default(),
        }
    }
}

/// Per-feature z-scoring fitted on the training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Population mean and stddev per column; zero spread becomes 1.
    pub fn fit(features: &[f64], n: usize, dim: usize) -> Self {
        let mut mean = vec![0.0; dim];
        for row in features.chunks_exact(dim).take(n) {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; dim];
        for row in features.chunks_exact(dim).take(n) {
            for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / n as f64).sqrt();
                if s > 0.0 && s.is_finite() { s } else { 1.0 }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.extend(x.iter().zip(&self.mean).zip(&self.std).map(|((x, m), s)| (x - m) / s));
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingMeta {
    #[serde(default)]
    pub tasks: Vec<String>,
    pub n_train: usize,
    pub seed: u64,
    #[serde(default)]
    pub c: f64,
    #[serde(default)]
    pub iterations: usize,
    #[serde(default)]
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    pub version: u32,
    pub target: ProbeTarget,
    pub feature_spec: FeatureSpec,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub standardizer: Option<Standardizer>,
    /// Threshold used to binarize the SE training labels.
    pub gamma_star: Option<f64>,
    pub training_meta: TrainingMeta,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl ProbeModel {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Decision value `w·standardize(x) + b`.
    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(ProbeError::DimMismatch {
                expected: self.weights.len(),
                got: x.len(),
            });
        }
        let dot = match &self.standardizer {
            Some(s) => self
                .weights
                .iter()
                .zip(x)
                .zip(s.mean.iter().zip(&s.std))
                .map(|((w, x), (m, sd))| w * ((x - m) / sd))
                .sum::<f64>(),
            None => self.weights.iter().zip(x).map(|(w, x)| w * x).sum(),
        };
        Ok(dot + self.bias)
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        self.decision(x).map(sigmoid)
    }

    /// Probabilities for each row of a row-major matrix.
    pub fn predict_batch(&self, exec: Execution, features: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        if d == 0 || !features.len().is_multiple_of(d) {
            return Err(ProbeError::DimMismatch {
                expected: d,
                got: features.len(),
            });
        }
        let rows: Vec<&[f64]> = features.chunks_exact(d).collect();
        par::map(exec, &rows, |r| self.predict_proba(r)).into_iter().collect()
    }
}

/// Objective value and gradient at `theta = [w..., b]` for design matrix `x`
/// (row-major, `n × dim`) and labels in {0, 1}.
pub fn objective_and_gradient(
    exec: Execution,
    x: &[f64],
    labels: &[u8],
    dim: usize,
    c: f64,
    theta: &[f64],
) -> (f64, Vec<f64>) {
    let (w, b) = theta.split_at(dim);
    let b = b[0];
    let rows: Vec<usize> = (0..labels.len()).collect();
    let partials = par::map_chunks(exec, &rows, CHUNK_ROWS, |_, chunk| {
        let mut loss = 0.0;
        let mut g = vec![0.0; dim + 1];
        for &i in chunk {
            let xi = &x[i * dim..(i + 1) * dim];
            let y = if labels[i] == 1 { 1.0 } else { -1.0 };
            let margin = y * (xi.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b);
            loss += softplus(-margin);
            // d/dz log(1 + exp(-y z)) = -y·σ(-y z)
            let r = -y * sigmoid(-margin);
            for (gj, xj) in g.iter_mut().zip(xi) {
                *gj += r * xj;
            }
            g[dim] += r;
        }
        (loss, g)
    });
    let mut loss = 0.0;
    let mut grad = vec![0.0; dim + 1];
    for (l, g) in partials {
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    let reg = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
    for (j, gj) in grad.iter_mut().enumerate() {
        *gj *= c;
        if j < dim {
            *gj += w[j];
        }
    }
    (reg + c * loss, grad)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub(crate) struct Minimum {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Limited-memory BFGS with a backtracking Armijo line search. Falls back to
/// steepest descent once when a quasi-Newton step fails to descend.
pub(crate) fn lbfgs<F>(f: F, x0: Vec<f64>, max_iter: usize, tol: f64) -> Minimum
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let mut x = x0;
    let (mut fx, mut g) = f(&x);
    let mut s_hist: Vec<Vec<f64>> = Vec::with_capacity(HISTORY);
    let mut y_hist: Vec<Vec<f64>> = Vec::with_capacity(HISTORY);
    let mut iterations = 0;
    while iterations < max_iter {
        if max_norm(&g) <= tol {
            return Minimum { x, iterations, converged: true };
        }
        // Two-loop recursion.
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alpha = vec![0.0; s_hist.len()];
        for k in (0..s_hist.len()).rev() {
            let rho = 1.0 / dot(&y_hist[k], &s_hist[k]);
            alpha[k] = rho * dot(&s_hist[k], &d);
            for (di, yi) in d.iter_mut().zip(&y_hist[k]) {
                *di -= alpha[k] * yi;
            }
        }
        if let (Some(s), Some(y)) = (s_hist.last(), y_hist.last()) {
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|di| *di *= gamma);
        }
        for k in 0..s_hist.len() {
            let rho = 1.0 / dot(&y_hist[k], &s_hist[k]);
            let beta = rho * dot(&y_hist[k], &d);
            for (di, si) in d.iter_mut().zip(&s_hist[k]) {
                *di += (alpha[k] - beta) * si;
            }
        }
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
            s_hist.clear();
            y_hist.clear();
        }
        let mut t = if s_hist.is_empty() { (1.0 / max_norm(&g)).min(1.0) } else { 1.0 };
        let slack = 4.0 * f64::EPSILON * fx.abs();
        let mut accepted = None;
        for _ in 0..60 {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            let (fn_, gn) = f(&xn);
            if fn_.is_finite() && fn_ <= fx + 1e-4 * t * slope + slack {
                accepted = Some((xn, fn_, gn));
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
        let Some((xn, fn_, gn)) = accepted else {
            if s_hist.is_empty() {
                break;
            }
            s_hist.clear();
            y_hist.clear();
            continue;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        if dot(&s, &y) > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if s_hist.len() == HISTORY {
                s_hist.remove(0);
                y_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
        }
        x = xn;
        fx = fn_;
        g = gn;
    }
    let converged = max_norm(&g) <= tol;
    Minimum { x, iterations, converged }
}

/// Fits a probe. The optimizer is deterministic: identical inputs give
/// identical weights regardless of execution mode.
pub fn fit_probe(
    ts: &TrainingSet,
    feature_spec: FeatureSpec,
    target: ProbeTarget,
    opts: &FitOptions,
) -> Result<ProbeModel> {
    if feature_spec.concat_dim() != ts.dim {
        return Err(ProbeError::DimMismatch {
            expected: feature_spec.concat_dim(),
            got: ts.dim,
        });
    }
    if !(opts.c > 0.0 && opts.c.is_finite()) {
        return Err(ProbeError::InvalidTrainingSet(format!("C must be positive, got {}", opts.c)));
    }
    if ts.labels.iter().all(|&l| l == ts.labels[0]) {
        return Err(ProbeError::SingleClassTraining);
    }
    let dim = ts.dim;
    let standardizer = opts.standardize.then(|| Standardizer::fit(&ts.features, ts.n, dim));
    let design: std::borrow::Cow<[f64]> = match &standardizer {
        Some(s) => {
            let mut out = Vec::with_capacity(ts.features.len());
            for row in ts.features.chunks_exact(dim) {
                s.apply_into(row, &mut out);
            }
            out.into()
        }
        None => ts.features.as_slice().into(),
    };
    let exec = opts.exec;
    let min = lbfgs(
        |theta| objective_and_gradient(exec, &design, &ts.labels, dim, opts.c, theta),
        vec![0.0; dim + 1],
        opts.max_iter,
        opts.tol,
    );
    if !min.converged {
        log::warn!(
            "probe fit stopped after {} iterations without reaching tolerance {}",
            min.iterations,
            opts.tol
        );
    }
    let mut weights = min.x;
    let bias = weights.pop().unwrap_or(0.0);
    Ok(ProbeModel {
        version: super::PROBE_VERSION,
        target,
        feature_spec,
        weights,
        bias,
        standardizer,
        gamma_star: None,
        training_meta: TrainingMeta {
            tasks: Vec::new(),
            n_train: ts.n,
            seed: opts.seed,
            c: opts.c,
            iterations: min.iterations,
            converged: min.converged,
        },
    })
}
