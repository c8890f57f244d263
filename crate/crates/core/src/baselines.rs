//! Comparison estimators: lasso, a Huber-loss adaptive lasso and a trimmed lasso.
//!
//! The last two approximate the published robust methods and are labeled
//! `adahuber-proxy` and `trimmed-proxy` wherever results are written.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::linalg::{gram_spectral_norm, select_entries, select_rows, soft_threshold};
use crate::model::Dataset;
use crate::solver::select_smallest;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    Lasso,
    AdaptiveHuber,
    Trimmed,
}

impl BaselineMethod {
    pub fn label(self) -> &'static str {
        match self {
            BaselineMethod::Lasso => "lasso",
            BaselineMethod::AdaptiveHuber => "adahuber-proxy",
            BaselineMethod::Trimmed => "trimmed-proxy",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub method: BaselineMethod,
    pub lambda: f64,
    /// Huber threshold; `None` tracks `1.345` robust residual scales of the current fit.
    #[serde(default)]
    pub huber_delta: Option<f64>,
    #[serde(default)]
    pub trim_count: usize,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_max_iters() -> usize {
    20_000
}

fn default_tol() -> f64 {
    1e-10
}

/// Cap on the adaptive per-coordinate weights.
pub const MAX_ADAPTIVE_WEIGHT: f64 = 1e6;
const IRLS_ROUNDS: usize = 200;
const TRIM_ROUNDS: usize = 100;

impl BaselineConfig {
    pub fn new(method: BaselineMethod, lambda: f64) -> Self {
        Self { method, lambda, huber_delta: None, trim_count: 0, max_iters: default_max_iters(), tol: default_tol() }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidConfig("lambda must be >= 0".into()));
        }
        if let Some(d) = self.huber_delta {
            if !(d > 0.0) {
                return Err(Error::InvalidConfig("huber_delta must be > 0".into()));
            }
        }
        if self.trim_count >= n.max(1) {
            return Err(Error::InvalidConfig(format!("trim_count {} must be below n = {n}", self.trim_count)));
        }
        Ok(())
    }
}

/// `sum_i (y_i - <x_i, theta>)^2 + lambda sum_j w_j |theta_j|`
pub fn lasso_objective(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    theta: &DVector<f64>,
    lambda: f64,
    w: Option<&DVector<f64>>,
) -> f64 {
    (y - x * theta).norm_squared() + lambda * l1_penalty(theta, w)
}

/// Weighted lasso by accelerated proximal gradient.
pub fn lasso_design(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    weights: Option<&DVector<f64>>,
    init: &DVector<f64>,
    max_iters: usize,
    tol: f64,
) -> Result<DVector<f64>> {
    let p = x.ncols();
    let xtx = x.transpose() * x;
    let xty = x.transpose() * y;
    let lip = 2.0 * gram_spectral_norm(x);
    if lip <= 0.0 {
        return Ok(DVector::zeros(p));
    }
    let step = 1.0 / lip;
    let w = weights.cloned().unwrap_or_else(|| DVector::from_element(p, 1.0));
    let yy = y.norm_squared();
    let value = |t: &DVector<f64>| {
        yy - 2.0 * t.dot(&xty)
            + t.dot(&(&xtx * t))
            + lambda * t.iter().zip(w.iter()).map(|(a, b)| a.abs() * b).sum::<f64>()
    };
    let mut theta = init.clone();
    let mut z = theta.clone();
    let mut t = 1.0f64;
    let mut current = value(&theta);
    for _ in 0..max_iters {
        let grad = (&xtx * &z - &xty) * 2.0;
        let moved_to = &z - grad * step;
        let next = DVector::from_fn(p, |j, _| soft_threshold(moved_to[j], step * lambda * w[j]));
        let next_value = value(&next);
        if next_value > current + 1e-15 * current.abs() {
            if t == 1.0 {
                break;
            }
            z = theta.clone();
            t = 1.0;
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let moved = (&next - &theta).norm();
        z = &next + (&next - &theta) * ((t - 1.0) / t_next);
        t = t_next;
        theta = next;
        current = next_value;
        if moved <= tol * (1.0 + theta.norm()) {
            break;
        }
    }
    ensure_finite(theta.iter(), "lasso")?;
    Ok(theta)
}

pub fn lasso(data: &Dataset, cfg: &BaselineConfig) -> Result<DVector<f64>> {
    cfg.validate(data.n())?;
    lasso_design(&data.x, &data.y, cfg.lambda, None, &DVector::zeros(data.p()), cfg.max_iters, cfg.tol)
}

/// Huber loss of a residual: `r^2 / 2` inside `[-delta, delta]`, `delta (|r| - delta / 2)` outside.
pub fn huber(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        0.5 * r * r
    } else {
        delta * (a - 0.5 * delta)
    }
}

/// `sum_i 2 huber(r_i) + lambda sum_j w_j |theta_j|`; equal to [`lasso_objective`]
/// when every residual lies within `delta`.
pub fn huber_objective(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    theta: &DVector<f64>,
    lambda: f64,
    delta: f64,
    w: Option<&DVector<f64>>,
) -> f64 {
    let loss: f64 = (y - x * theta).iter().map(|&r| 2.0 * huber(r, delta)).sum();
    loss + lambda * l1_penalty(theta, w)
}

fn l1_penalty(theta: &DVector<f64>, w: Option<&DVector<f64>>) -> f64 {
    match w {
        Some(w) => theta.iter().zip(w.iter()).map(|(t, wj)| wj * t.abs()).sum(),
        None => theta.iter().map(|t| t.abs()).sum(),
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `1.345 * 1.4826 * MAD(r)`, floored at `1e-8`.
pub fn robust_huber_delta(residuals: &DVector<f64>) -> f64 {
    let med = median(residuals.iter().copied().collect());
    let mad = median(residuals.iter().map(|r| (r - med).abs()).collect());
    (1.345 * 1.4826 * mad).max(1e-8)
}

/// Huber-loss lasso by iteratively reweighted least squares; each round solves a
/// row-weighted lasso with weights `min(1, delta / |r_i|)`.
///
/// With `delta = None` the threshold is re-estimated from the current residuals
/// by [`robust_huber_delta`] before every round.
pub fn huber_lasso_design(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    delta: Option<f64>,
    penalty_weights: Option<&DVector<f64>>,
    init: &DVector<f64>,
    max_iters: usize,
    tol: f64,
) -> Result<DVector<f64>> {
    let mut theta = init.clone();
    for _ in 0..IRLS_ROUNDS {
        let r = y - x * &theta;
        let delta = delta.unwrap_or_else(|| robust_huber_delta(&r));
        let sw = r.map(|ri| if ri.abs() <= delta { 1.0 } else { (delta / ri.abs()).sqrt() });
        let xw = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] * sw[i]);
        let yw = y.component_mul(&sw);
        let next = lasso_design(&xw, &yw, lambda, penalty_weights, &theta, max_iters, tol)?;
        let moved = (&next - &theta).norm();
        theta = next;
        if moved <= 1e-9 * (1.0 + theta.norm()) {
            break;
        }
    }
    Ok(theta)
}

/// Two-stage Huber lasso: a plain Huber lasso, then a re-solve with
/// per-coordinate penalty weights from [`adaptive_weights`].
pub fn adaptive_huber_lasso(data: &Dataset, cfg: &BaselineConfig) -> Result<DVector<f64>> {
    cfg.validate(data.n())?;
    let p = data.p();
    let zero = DVector::zeros(p);
    let delta = cfg.huber_delta;
    let stage0 = lasso_design(&data.x, &data.y, cfg.lambda, None, &zero, cfg.max_iters, cfg.tol)?;
    let stage1 = huber_lasso_design(&data.x, &data.y, cfg.lambda, delta, None, &stage0, cfg.max_iters, cfg.tol)?;
    let weights = adaptive_weights(&stage1);
    huber_lasso_design(&data.x, &data.y, cfg.lambda, delta, Some(&weights), &stage1, cfg.max_iters, cfg.tol)
}

/// `c / |theta_j|` capped at [`MAX_ADAPTIVE_WEIGHT`], with `c` the mean nonzero
/// magnitude so that a coefficient of typical size keeps weight one.
pub fn adaptive_weights(theta: &DVector<f64>) -> DVector<f64> {
    let nonzero: Vec<f64> = theta.iter().filter(|t| **t != 0.0).map(|t| t.abs()).collect();
    let c = if nonzero.is_empty() { 1.0 } else { nonzero.iter().sum::<f64>() / nonzero.len() as f64 };
    theta.map(|t| if t == 0.0 { MAX_ADAPTIVE_WEIGHT } else { (c / t.abs()).min(MAX_ADAPTIVE_WEIGHT) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrimmedFit {
    pub theta: DVector<f64>,
    pub kept: Vec<bool>,
    pub rounds: usize,
    /// The kept set revisited an earlier state without settling.
    pub cycle_detected: bool,
}

/// Alternates a lasso on the kept rows with dropping the `trim_count`
/// largest residuals over all rows.
pub fn trimmed_lasso(data: &Dataset, cfg: &BaselineConfig) -> Result<TrimmedFit> {
    cfg.validate(data.n())?;
    let n = data.n();
    let mut kept = vec![true; n];
    let mut seen: HashSet<Vec<bool>> = HashSet::new();
    let mut theta = DVector::zeros(data.p());
    let mut rounds = 0;
    let mut cycle_detected = false;
    seen.insert(kept.clone());
    while rounds < TRIM_ROUNDS {
        rounds += 1;
        let rows: Vec<usize> = (0..n).filter(|&i| kept[i]).collect();
        let x = select_rows(&data.x, &rows);
        let y = select_entries(&data.y, &rows);
        theta = lasso_design(&x, &y, cfg.lambda, None, &theta, cfg.max_iters, cfg.tol)?;
        let next = select_smallest(&data.residual_losses(&theta), n - cfg.trim_count);
        if next == kept {
            break;
        }
        if !seen.insert(next.clone()) {
            cycle_detected = true;
            kept = next;
            break;
        }
        kept = next;
    }
    Ok(TrimmedFit { theta, kept, rounds, cycle_detected })
}

/// Runs the configured baseline and returns its estimate.
pub fn run_baseline(data: &Dataset, cfg: &BaselineConfig) -> Result<DVector<f64>> {
    match cfg.method {
        BaselineMethod::Lasso => lasso(data, cfg),
        BaselineMethod::AdaptiveHuber => adaptive_huber_lasso(data, cfg),
        BaselineMethod::Trimmed => trimmed_lasso(data, cfg).map(|f| f.theta),
    }
}
