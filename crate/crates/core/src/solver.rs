//! Block solver for the lifted relaxation and the penalized refit.
//!
//! The outer loop alternates an exact minimization over the selection weights
//! `b` (a sort) with proximal projected-gradient steps on the lifted matrix.
//! The final estimate is obtained by refitting on the selected samples.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::linalg::{entrywise_l1, frobenius_inner, gram_spectral_norm, l1_norm, select_rows};
use crate::model::{extract_theta, lift_parameter, Dataset, Vartheta, DEFAULT_RANK_TOL};
use crate::projections::{
    project_psd_corner_warm, prox_entrywise_l1, prox_l1_psd_corner, BFeasibleSet, DEFAULT_PSD_ITERS, DEFAULT_PSD_TOL,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepRule {
    Fixed {
        eta: f64,
    },
    /// Shrink by `beta` until `F(new) <= F(old) - (c / eta) ||new - old||_F^2`.
    Backtracking {
        beta: f64,
        c: f64,
    },
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule::Backtracking { beta: 0.5, c: 1e-4 }
    }
}

/// How the `vartheta` block is updated for a fixed selection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerMethod {
    /// Solve the block to tolerance by ADMM.
    #[default]
    Admm,
    /// `max_inner` proximal projected-gradient steps under `step_rule`.
    ProxGradient,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "theta", rename_all = "snake_case")]
pub enum ThetaInit {
    #[default]
    Zeros,
    Warm(Vec<f64>),
    /// Gaussian entries with standard deviation `0.1`, drawn from `SolverConfig::seed`.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub m: usize,
    pub lambda: f64,
    #[serde(default = "defaults::max_outer")]
    pub max_outer: usize,
    #[serde(default = "defaults::max_inner")]
    pub max_inner: usize,
    #[serde(default)]
    pub step_rule: StepRule,
    #[serde(default = "defaults::tol_obj")]
    pub tol_obj: f64,
    #[serde(default = "defaults::psd_iters")]
    pub psd_iters: usize,
    #[serde(default = "defaults::psd_tol")]
    pub psd_tol: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub theta_init: ThetaInit,
    #[serde(default)]
    pub refit: RefitOptions,
    /// Upper bound on refit/reselect rounds after the relaxation converges.
    #[serde(default = "defaults::max_polish")]
    pub max_polish: usize,
    #[serde(default)]
    pub inner: InnerMethod,
    /// ADMM iterations per outer round.
    #[serde(default = "defaults::admm_iters")]
    pub admm_iters: usize,
    /// Relative primal/dual residual tolerance of the ADMM block.
    #[serde(default = "defaults::admm_tol")]
    pub admm_tol: f64,
    /// Dykstra rounds per proximal step; 1 is the plain prox-then-project composition.
    #[serde(default = "defaults::prox_rounds")]
    pub prox_rounds: usize,
    /// Number of boundary samples on each side considered for exchanges.
    #[serde(default = "defaults::swap_candidates")]
    pub swap_candidates: usize,
}

mod defaults {
    pub fn max_outer() -> usize {
        200
    }
    pub fn max_inner() -> usize {
        25
    }
    pub fn tol_obj() -> f64 {
        1e-8
    }
    pub fn psd_iters() -> usize {
        super::DEFAULT_PSD_ITERS
    }
    pub fn psd_tol() -> f64 {
        super::DEFAULT_PSD_TOL
    }
    pub fn max_polish() -> usize {
        50
    }
    pub fn prox_rounds() -> usize {
        1
    }
    pub fn admm_iters() -> usize {
        100
    }
    pub fn admm_tol() -> f64 {
        1e-10
    }
    pub fn swap_candidates() -> usize {
        4
    }
    pub fn refit_iters() -> usize {
        20_000
    }
    pub fn refit_tol() -> f64 {
        1e-12
    }
}

impl SolverConfig {
    pub fn new(m: usize, lambda: f64) -> Self {
        Self {
            m,
            lambda,
            max_outer: defaults::max_outer(),
            max_inner: defaults::max_inner(),
            step_rule: StepRule::default(),
            tol_obj: defaults::tol_obj(),
            psd_iters: defaults::psd_iters(),
            psd_tol: defaults::psd_tol(),
            seed: 0,
            theta_init: ThetaInit::Zeros,
            refit: RefitOptions::default(),
            max_polish: defaults::max_polish(),
            inner: InnerMethod::default(),
            admm_iters: defaults::admm_iters(),
            admm_tol: defaults::admm_tol(),
            prox_rounds: defaults::prox_rounds(),
            swap_candidates: defaults::swap_candidates(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::InvalidConfig("m must be at least 1".into()));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidConfig("lambda must be finite and >= 0".into()));
        }
        if !(self.tol_obj >= 0.0) {
            return Err(Error::InvalidConfig("tol_obj must be >= 0".into()));
        }
        match self.step_rule {
            StepRule::Fixed { eta } if !(eta > 0.0) => {
                return Err(Error::InvalidConfig("fixed step must be positive".into()))
            }
            StepRule::Backtracking { beta, c } if !(beta > 0.0 && beta < 1.0) || !(c >= 0.0) => {
                return Err(Error::InvalidConfig("backtracking needs 0 < beta < 1 and c >= 0".into()))
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    /// Selection weights from the final `b`-step of the relaxation.
    pub b_hat: Vec<f64>,
    /// Final selection (exactly `m` entries set) after the refit rounds.
    pub b_rounded: Vec<bool>,
    pub vartheta_hat: Vartheta,
    pub theta_hat: Vec<f64>,
    pub rank1_gap: f64,
    pub rank_warning: bool,
    /// Relaxation objective after every outer round, starting at the initial point.
    pub objective_trace: Vec<f64>,
    pub outer_iters: usize,
    pub converged: bool,
    /// Subset-regression objective of `(b_rounded, theta_hat)`.
    pub refit_objective: f64,
    pub polish_rounds: usize,
    pub config: SolverConfig,
}

impl SolveResult {
    pub fn relaxation_objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(f64::NAN)
    }

    pub fn theta(&self) -> DVector<f64> {
        DVector::from_vec(self.theta_hat.clone())
    }
}

/// `sum_i b_i A_i`, assembled blockwise from `X^T diag(b) X`, `-X^T diag(b) y` and `sum_i b_i y_i^2`.
pub fn grad_vartheta(b: &DVector<f64>, data: &Dataset) -> Result<DMatrix<f64>> {
    if b.len() != data.n() {
        return Err(Error::DimensionMismatch(format!("b has {} entries, n = {}", b.len(), data.n())));
    }
    ensure_finite(b.iter(), "b")?;
    let p = data.p();
    let bx = DMatrix::from_fn(data.n(), p, |i, j| b[i] * data.x[(i, j)]);
    let top = data.x.transpose() * &bx;
    let by = b.component_mul(&data.y);
    let col = -(data.x.transpose() * &by);
    let corner = by.dot(&data.y);
    let mut g = DMatrix::zeros(p + 1, p + 1);
    g.view_mut((0, 0), (p, p)).copy_from(&top);
    for j in 0..p {
        g[(j, p)] = col[j];
        g[(p, j)] = col[j];
    }
    g[(p, p)] = corner;
    Ok(crate::linalg::symmetrize(&g))
}

/// Indicator of the `m` smallest losses; ties go to the smaller index.
pub fn select_smallest(losses: &DVector<f64>, m: usize) -> Vec<bool> {
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]).then(a.cmp(&b)));
    let mut sel = vec![false; losses.len()];
    for &i in order.iter().take(m) {
        sel[i] = true;
    }
    sel
}

/// Exact minimizer of `sum_i b_i <A_i, V>` over `{b in [0,1]^n, sum b >= m}`.
///
/// Negative losses (possible only through rounding) are always selected.
pub fn b_step(vartheta: &Vartheta, data: &Dataset, m: usize) -> Result<DVector<f64>> {
    BFeasibleSet::new(data.n(), m)?;
    if vartheta.p() != data.p() {
        return Err(Error::DimensionMismatch(format!("vartheta has p = {}, data p = {}", vartheta.p(), data.p())));
    }
    let losses = data.lifted_losses(&vartheta.v);
    let sel = select_smallest(&losses, m);
    Ok(DVector::from_fn(data.n(), |i, _| if sel[i] || losses[i] < 0.0 { 1.0 } else { 0.0 }))
}

fn lifted_value(g: &DMatrix<f64>, v: &DMatrix<f64>, lambda: f64) -> f64 {
    frobenius_inner(g, v) + lambda * entrywise_l1(v)
}

fn initial_theta(cfg: &SolverConfig, p: usize) -> Result<DVector<f64>> {
    match &cfg.theta_init {
        ThetaInit::Zeros => Ok(DVector::zeros(p)),
        ThetaInit::Warm(t) => {
            if t.len() != p {
                return Err(Error::DimensionMismatch(format!("warm start has {} entries, p = {p}", t.len())));
            }
            Ok(DVector::from_column_slice(t))
        }
        ThetaInit::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            Ok(DVector::from_fn(p, |_, _| 0.1 * rng.sample::<f64, _>(rand_distr::StandardNormal)))
        }
    }
}

/// Warm-start state carried between the `vartheta` blocks of successive outer rounds.
struct InnerState {
    eta: f64,
    gnorm: f64,
    shift: Option<f64>,
    rho: f64,
    dual: Option<DMatrix<f64>>,
    iterate: Option<Vartheta>,
}

impl InnerState {
    fn new(cfg: &SolverConfig, g: &DMatrix<f64>, vt: &Vartheta) -> Self {
        let gnorm = g.norm().max(1.0);
        let eta = match cfg.step_rule {
            StepRule::Fixed { eta } => eta,
            StepRule::Backtracking { .. } => 1.0 / gnorm,
        };
        let rho = (gnorm / vt.v.nrows() as f64).max(1e-3);
        Self { eta, gnorm, shift: None, rho, dual: None, iterate: None }
    }

    /// Up to `max_inner` steps `V <- prox(V - eta G)` with the configured step rule.
    fn prox_gradient_block(
        &mut self,
        cfg: &SolverConfig,
        g: &DMatrix<f64>,
        vt: &Vartheta,
        mut current: f64,
    ) -> Result<(Vartheta, f64, bool)> {
        let lambda = cfg.lambda;
        let mut vt = vt.clone();
        for _ in 0..cfg.max_inner {
            let eta_before = self.eta;
            let accepted = loop {
                let eta = self.eta;
                let (cand, s) = prox_l1_psd_corner(
                    &(&vt.v - g * eta),
                    eta * lambda,
                    cfg.prox_rounds,
                    cfg.psd_tol * (1.0 + vt.v.norm()),
                    cfg.psd_iters,
                    cfg.psd_tol,
                    self.shift,
                )?;
                let value = lifted_value(g, &cand.v, lambda);
                if !value.is_finite() {
                    return Err(Error::NonFinite("relaxation objective"));
                }
                let moved = (&cand.v - &vt.v).norm_squared();
                match cfg.step_rule {
                    StepRule::Fixed { .. } => break (value <= current).then_some((cand, s, value)),
                    StepRule::Backtracking { beta, c } => {
                        if value <= current - c / eta * moved {
                            break Some((cand, s, value));
                        }
                        self.eta *= beta;
                        if self.eta < 1e-14 / self.gnorm {
                            break None;
                        }
                    }
                }
            };
            let Some((cand, s, value)) = accepted else {
                self.eta = eta_before;
                break;
            };
            let gain = current - value;
            vt = cand;
            self.shift = Some(s);
            current = value;
            if let StepRule::Backtracking { beta, .. } = cfg.step_rule {
                self.eta /= beta;
            }
            if gain <= cfg.tol_obj * current.abs() + 1e-12 {
                break;
            }
        }
        Ok((vt, current, true))
    }

    /// Minimizes `<G, V> + lambda ||V||_1` over the feasible matrices by ADMM on
    /// the split `V = W`, `W` feasible, with residual balancing of the penalty.
    /// At most `admm_iters` iterations run per call; the iterate and the scaled
    /// dual persist across calls. The iterate replaces `vt` only if it does not
    /// raise the objective. The flag reports whether the residuals converged.
    fn admm_block(
        &mut self,
        cfg: &SolverConfig,
        g: &DMatrix<f64>,
        vt: &Vartheta,
        current: f64,
    ) -> Result<(Vartheta, f64, bool)> {
        let lambda = cfg.lambda;
        let d = vt.v.nrows();
        let mut w = self.iterate.take().unwrap_or_else(|| vt.clone());
        let mut u = self.dual.take().unwrap_or_else(|| DMatrix::zeros(d, d));
        let mut done = false;
        for _ in 0..cfg.admm_iters {
            let v = prox_entrywise_l1(&(&w.v - &u - g / self.rho), lambda / self.rho);
            let (next, s) = project_psd_corner_warm(&(&v + &u), cfg.psd_iters, cfg.psd_tol, self.shift)?;
            self.shift = Some(s);
            let dual_res = (&next.v - &w.v).norm() * self.rho;
            let diff = &v - &next.v;
            let primal_res = diff.norm();
            u += diff;
            w = next;
            let scale = 1.0 + w.v.norm();
            if primal_res <= cfg.admm_tol * scale && dual_res <= cfg.admm_tol * scale * self.rho.max(1.0) {
                done = true;
                break;
            }
            if primal_res > 10.0 * dual_res {
                self.rho *= 2.0;
                u *= 0.5;
            } else if dual_res > 10.0 * primal_res {
                self.rho *= 0.5;
                u *= 2.0;
            }
        }
        self.dual = Some(u);
        let value = lifted_value(g, &w.v, lambda);
        if !value.is_finite() {
            return Err(Error::NonFinite("relaxation objective"));
        }
        self.iterate = Some(w.clone());
        if value <= current {
            Ok((w, value, done))
        } else {
            Ok((vt.clone(), current, done))
        }
    }
}

/// Consecutive flat rounds with an unchanged selection that count as convergence.
const STALL_ROUNDS: usize = 3;

/// Solves the lifted relaxation, then refits on the selected samples.
pub fn solve_invex(data: &Dataset, cfg: &SolverConfig) -> Result<SolveResult> {
    cfg.validate()?;
    BFeasibleSet::new(data.n(), cfg.m)?;
    let lambda = cfg.lambda;
    let theta0 = initial_theta(cfg, data.p())?;
    let mut vt = lift_parameter(&theta0)?;
    let mut b = b_step(&vt, data, cfg.m)?;
    let mut g = grad_vartheta(&b, data)?;
    let mut current = lifted_value(&g, &vt.v, lambda);
    let mut trace = vec![current];

    let mut inner = InnerState::new(cfg, &g, &vt);
    let mut converged = false;
    let mut outer = 0;
    let mut stalled = 0usize;

    while outer < cfg.max_outer {
        outer += 1;
        let start = current;
        let (next, value, block_done) = match cfg.inner {
            InnerMethod::Admm => inner.admm_block(cfg, &g, &vt, current)?,
            InnerMethod::ProxGradient => inner.prox_gradient_block(cfg, &g, &vt, current)?,
        };
        vt = next;
        current = value;
        let new_b = b_step(&vt, data, cfg.m)?;
        let reselected = new_b != b;
        if reselected {
            b = new_b;
            g = grad_vartheta(&b, data)?;
            current = lifted_value(&g, &vt.v, lambda);
        }
        if !current.is_finite() {
            return Err(Error::NonFinite("relaxation objective"));
        }
        trace.push(current);
        let flat = !reselected && start - current <= cfg.tol_obj * start.abs() + 1e-12;
        stalled = if flat { stalled + 1 } else { 0 };
        if flat && (block_done || stalled >= STALL_ROUNDS) {
            converged = true;
            break;
        }
    }

    let extraction = extract_theta(&vt, DEFAULT_RANK_TOL)?;
    let selection = select_smallest(&data.lifted_losses(&vt.v), cfg.m);
    let (selection, fit, polish_rounds) = refine_selection(data, selection, lambda, cfg)?;
    log::debug!(
        "invex solve: {outer} outer rounds, converged = {converged}, {polish_rounds} polish rounds, rank-1 gap {:.2e}",
        extraction.rank1_gap
    );

    Ok(SolveResult {
        b_hat: b.iter().copied().collect(),
        b_rounded: selection,
        vartheta_hat: vt,
        theta_hat: fit.theta.iter().copied().collect(),
        rank1_gap: extraction.rank1_gap,
        rank_warning: extraction.rank_warning,
        objective_trace: trace,
        outer_iters: outer,
        converged,
        refit_objective: fit.objective,
        polish_rounds,
        config: cfg.clone(),
    })
}

/// Alternates refits with re-selection of the `m` smallest residuals, then tries
/// exchanging boundary samples (largest selected losses against smallest
/// unselected ones) whenever re-selection alone stops improving.
///
/// Every accepted move strictly lowers the subset-regression objective.
fn refine_selection(
    data: &Dataset,
    mut selection: Vec<bool>,
    lambda: f64,
    cfg: &SolverConfig,
) -> Result<(Vec<bool>, RefitOutcome, usize)> {
    let mut fit = refit_selection(data, &selection, lambda, &cfg.refit)?;
    let mut rounds = 0;
    while rounds < cfg.max_polish {
        let losses = data.residual_losses(&fit.theta);
        let next = select_smallest(&losses, cfg.m);
        if next != selection {
            let next_fit = refit_selection_from(data, &next, lambda, &fit.theta, &cfg.refit)?;
            if next_fit.objective < fit.objective {
                rounds += 1;
                selection = next;
                fit = next_fit;
                continue;
            }
        }
        let Some((swapped, swapped_fit)) = best_exchange(data, &selection, &losses, &fit, lambda, cfg)? else {
            break;
        };
        rounds += 1;
        selection = swapped;
        fit = swapped_fit;
    }
    Ok((selection, fit, rounds))
}

fn best_exchange(
    data: &Dataset,
    selection: &[bool],
    losses: &DVector<f64>,
    fit: &RefitOutcome,
    lambda: f64,
    cfg: &SolverConfig,
) -> Result<Option<(Vec<bool>, RefitOutcome)>> {
    let q = cfg.swap_candidates;
    if q == 0 {
        return Ok(None);
    }
    let by_loss = |a: &usize, b: &usize| losses[*a].total_cmp(&losses[*b]).then(a.cmp(b));
    let mut inside: Vec<usize> = (0..data.n()).filter(|&i| selection[i]).collect();
    let mut outside: Vec<usize> = (0..data.n()).filter(|&i| !selection[i]).collect();
    inside.sort_by(|a, b| by_loss(b, a));
    outside.sort_by(by_loss);
    let mut best: Option<(Vec<bool>, RefitOutcome)> = None;
    let threshold = fit.objective - 1e-12 * fit.objective.abs().max(1.0);
    for &i in inside.iter().take(q) {
        for &j in outside.iter().take(q) {
            let mut trial = selection.to_vec();
            trial[i] = false;
            trial[j] = true;
            let trial_fit = refit_selection_from(data, &trial, lambda, &fit.theta, &cfg.refit)?;
            let bar = best.as_ref().map_or(threshold, |(_, f)| f.objective);
            if trial_fit.objective < bar {
                best = Some((trial, trial_fit));
            }
        }
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefitOptions {
    #[serde(default = "defaults::refit_iters")]
    pub max_iters: usize,
    /// Stop when the iterate moves less than `tol * (1 + ||theta||)`.
    #[serde(default = "defaults::refit_tol")]
    pub tol: f64,
    /// Solve the stationarity system on the detected support after the iterations.
    #[serde(default = "polish_default")]
    pub polish: bool,
}

fn polish_default() -> bool {
    true
}

impl Default for RefitOptions {
    fn default() -> Self {
        Self { max_iters: defaults::refit_iters(), tol: defaults::refit_tol(), polish: true }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefitOutcome {
    pub theta: DVector<f64>,
    pub objective: f64,
    pub iters: usize,
}

/// `||y - X theta||^2 + lambda (||theta||_1 + 1)^2`
pub fn refit_objective(x: &DMatrix<f64>, y: &DVector<f64>, theta: &DVector<f64>, lambda: f64) -> f64 {
    let r = y - x * theta;
    let s = l1_norm(theta) + 1.0;
    r.norm_squared() + lambda * s * s
}

/// Proximal map of `t * lambda * (||.||_1 + 1)^2`.
///
/// The minimizer soft-thresholds every coordinate by a common level
/// `tau = a (1 + S_K) / (1 + a K)` with `a = 2 t lambda`, where `K` counts the
/// coordinates left active and `S_K` sums their magnitudes.
pub fn prox_squared_l1(v: &DVector<f64>, t_lambda: f64) -> DVector<f64> {
    let a = 2.0 * t_lambda;
    if a <= 0.0 {
        return v.clone();
    }
    let mut u: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    u.sort_by(|x, y| y.total_cmp(x));
    let mut tau = a;
    let mut sum = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        sum += uk;
        let kk = (k + 1) as f64;
        let cand = a * (1.0 + sum) / (1.0 + a * kk);
        let next = u.get(k + 1).copied().unwrap_or(0.0);
        if cand < uk && cand >= next {
            tau = cand;
            break;
        }
    }
    if u.first().is_none_or(|&u0| u0 <= a) {
        tau = a;
    }
    v.map(|x| x.signum() * (x.abs() - tau).max(0.0))
}

/// Minimizes [`refit_objective`] by accelerated proximal gradient from `init`.
pub fn refit_design(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    init: &DVector<f64>,
    opts: &RefitOptions,
) -> Result<RefitOutcome> {
    if x.nrows() != y.len() || x.ncols() != init.len() {
        return Err(Error::DimensionMismatch(format!(
            "design {}x{}, {} responses, start of length {}",
            x.nrows(),
            x.ncols(),
            y.len(),
            init.len()
        )));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidConfig("lambda must be >= 0".into()));
    }
    let p = x.ncols();
    let xtx = x.transpose() * x;
    let xty = x.transpose() * y;
    let lip = 2.0 * gram_spectral_norm(x);
    let yy = y.norm_squared();
    let quick_value = |theta: &DVector<f64>| {
        let s = l1_norm(theta) + 1.0;
        yy - 2.0 * theta.dot(&xty) + theta.dot(&(&xtx * theta)) + lambda * s * s
    };
    let mut theta = init.clone();
    let mut iters = 0;
    if lip > 0.0 {
        let step = 1.0 / lip;
        let mut z = theta.clone();
        let mut t = 1.0f64;
        let mut value = quick_value(&theta);
        while iters < opts.max_iters {
            iters += 1;
            let grad = (&xtx * &z - &xty) * 2.0;
            let next = prox_squared_l1(&(&z - grad * step), step * lambda);
            let next_value = quick_value(&next);
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let moved = (&next - &theta).norm();
            if next_value > value + 1e-15 * value.abs() {
                if t == 1.0 {
                    // a plain proximal step from theta no longer descends
                    break;
                }
                // adaptive restart
                z = theta.clone();
                t = 1.0;
                continue;
            }
            z = &next + (&next - &theta) * ((t - 1.0) / t_next);
            t = t_next;
            theta = next;
            value = next_value;
            if moved <= opts.tol * (1.0 + theta.norm()) {
                break;
            }
        }
    } else {
        // X = 0: only the penalty remains, minimized at zero
        theta = DVector::zeros(p);
    }
    if opts.polish {
        if let Some(polished) = polish_on_support(x, y, &xtx, &xty, &theta, lambda) {
            if refit_objective(x, y, &polished, lambda) <= refit_objective(x, y, &theta, lambda) + 1e-12 {
                theta = polished;
            }
        }
    }
    ensure_finite(theta.iter(), "refit")?;
    let objective = refit_objective(x, y, &theta, lambda);
    Ok(RefitOutcome { theta, objective, iters })
}

/// Solves `(X_S^T X_S + lambda s s^T) theta_S = X_S^T y - lambda s` for the current
/// support and signs, returning it only if it satisfies every optimality condition.
fn polish_on_support(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    xtx: &DMatrix<f64>,
    xty: &DVector<f64>,
    theta: &DVector<f64>,
    lambda: f64,
) -> Option<DVector<f64>> {
    let p = theta.len();
    let scale = theta.amax().max(1.0);
    let support: Vec<usize> = (0..p).filter(|&j| theta[j].abs() > 1e-9 * scale).collect();
    let signs: Vec<f64> = support.iter().map(|&j| theta[j].signum()).collect();
    let mut out = DVector::zeros(p);
    if !support.is_empty() {
        let k = support.len();
        let sys = DMatrix::from_fn(k, k, |a, b| xtx[(support[a], support[b])] + lambda * signs[a] * signs[b]);
        let rhs = DVector::from_fn(k, |a, _| xty[support[a]] - lambda * signs[a]);
        let sol = sys.cholesky()?.solve(&rhs);
        for (a, &j) in support.iter().enumerate() {
            if sol[a] * signs[a] <= 0.0 {
                return None;
            }
            out[j] = sol[a];
        }
    }
    let resid = y - x * &out;
    let corr = x.transpose() * resid;
    let bound = lambda * (l1_norm(&out) + 1.0);
    let slack = 1e-9 * (1.0 + bound);
    for j in 0..p {
        if out[j] == 0.0 && corr[j].abs() > bound + slack {
            return None;
        }
    }
    Some(out)
}

/// Squared-penalty refit on the rows flagged in `selection`, started at zero.
pub fn refit(data: &Dataset, selection: &[bool], lambda: f64) -> Result<DVector<f64>> {
    refit_selection(data, selection, lambda, &RefitOptions::default()).map(|f| f.theta)
}

pub fn refit_selection(data: &Dataset, selection: &[bool], lambda: f64, opts: &RefitOptions) -> Result<RefitOutcome> {
    refit_selection_from(data, selection, lambda, &DVector::zeros(data.p()), opts)
}

/// Refit on the selected rows, started at `init`.
pub fn refit_selection_from(
    data: &Dataset,
    selection: &[bool],
    lambda: f64,
    init: &DVector<f64>,
    opts: &RefitOptions,
) -> Result<RefitOutcome> {
    if selection.len() != data.n() {
        return Err(Error::DimensionMismatch(format!("selection has {} entries, n = {}", selection.len(), data.n())));
    }
    let rows = crate::linalg::selected_indices(selection);
    if rows.is_empty() {
        return Err(Error::InvalidConfig("refit needs at least one selected sample".into()));
    }
    let x = select_rows(&data.x, &rows);
    let y = DVector::from_fn(rows.len(), |i, _| data.y[rows[i]]);
    refit_design(&x, &y, lambda, init, opts)
}

/// Largest violation of the refit stationarity conditions
/// `X^T (X theta - y) + lambda (||theta||_1 + 1) omega = 0`, `omega` in the l1 subdifferential.
pub fn refit_stationarity(x: &DMatrix<f64>, y: &DVector<f64>, theta: &DVector<f64>, lambda: f64) -> f64 {
    let corr = x.transpose() * (y - x * theta);
    let bound = lambda * (l1_norm(theta) + 1.0);
    (0..theta.len())
        .map(|j| {
            if theta[j] != 0.0 {
                (corr[j] - bound * theta[j].signum()).abs()
            } else {
                (corr[j].abs() - bound).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}
