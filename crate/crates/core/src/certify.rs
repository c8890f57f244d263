//! Primal-dual witness checks for a candidate solution.
//!
//! Given a binary selection and a parameter restricted to a support `S`, the
//! dual variables of the compact relaxation are built in closed form and every
//! KKT condition is evaluated numerically. The module also houses the
//! finite-sample assumption diagnostics, the off-support subgradient bound and
//! the two witnesses about the shape of the objective (invexity of the lifted
//! relaxation, non-convexity of the original problem).

use log::debug;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    frobenius_inner, induced_inf_norm, l1_norm, select_columns, select_entries, select_rows, selected_indices,
    sorted_eigenvalues, submatrix,
};
use crate::model::{lift_parameter, Dataset, Vartheta};
use crate::projections::{project_b, BFeasibleSet};
use crate::solver::{refit_design, RefitOptions};

/// Population bounds on the support covariance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AlphaBounds {
    Known {
        alpha1: f64,
        alpha2: f64,
    },
    /// Taken from the empirical covariance itself; diagnostic only.
    Estimated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertifyConfig {
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default = "default_alpha")]
    pub alpha: AlphaBounds,
    /// Slack allowed on the sign conditions of the multipliers.
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub refit: RefitOptions,
}

fn default_kappa() -> f64 {
    0.5
}

fn default_alpha() -> AlphaBounds {
    AlphaBounds::Estimated
}

fn default_tol() -> f64 {
    1e-8
}

impl Default for CertifyConfig {
    fn default() -> Self {
        Self { kappa: default_kappa(), alpha: default_alpha(), tol: default_tol(), refit: RefitOptions::default() }
    }
}

impl CertifyConfig {
    /// Uses the extreme eigenvalues of `sigma` restricted to `support`.
    pub fn with_population_covariance(mut self, sigma: &DMatrix<f64>, support: &[usize]) -> Self {
        let eig = sorted_eigenvalues(&submatrix(sigma, support, support));
        if let (Some(&lo), Some(&hi)) = (eig.first(), eig.last()) {
            self.alpha = AlphaBounds::Known { alpha1: lo, alpha2: hi };
        }
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualCertificate {
    pub support: Vec<usize>,
    /// Parameter over `support`.
    pub theta_under: Vec<f64>,
    pub nu: f64,
    pub nu_interval: (f64, f64),
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    #[serde(rename = "Lambda")]
    pub lambda_matrix: DMatrix<f64>,
    pub mu_corner: f64,
    pub zeta: DMatrix<f64>,
    pub omega: Vec<f64>,
    /// Off-support entries of `omega` that had to be clipped into `[-1, 1]`.
    pub omega_clipped: usize,
    pub feasible: bool,
}

impl DualCertificate {
    /// `[theta; 1][theta; 1]^T` over the support.
    pub fn vartheta_under(&self) -> DMatrix<f64> {
        let theta = DVector::from_column_slice(&self.theta_under);
        lift_parameter(&theta).map(|v| v.v).unwrap_or_else(|_| DMatrix::zeros(0, 0))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KKTReport {
    pub stationarity_b_max: f64,
    /// Frobenius norm of the matrix stationarity residual, relative to `max(1, ||sum_i b_i A_i||_F)`.
    pub stationarity_vartheta_norm: f64,
    pub comp_slack_max: f64,
    pub dual_feas_min_eig: f64,
    pub nullvec_residual: f64,
    pub second_eig: f64,
    pub multipliers_min: f64,
    pub primal_feas_ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub support: Vec<usize>,
    pub rows_used: usize,
    pub min_eig_ss: f64,
    pub max_eig_ss: f64,
    pub incoherence: f64,
    pub kappa_implied: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha_estimated: bool,
    pub min_eig_pass: bool,
    pub max_eig_pass: bool,
    pub incoherence_pass: bool,
}

impl AssumptionReport {
    pub fn pass(&self) -> bool {
        self.min_eig_pass && self.max_eig_pass && self.incoherence_pass
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrictDualReport {
    pub omega_bar: Vec<f64>,
    pub omega_bar_inf: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub lambda: f64,
    pub certificate: DualCertificate,
    pub kkt: KKTReport,
    pub strict: Option<StrictDualReport>,
    pub assumptions: Option<AssumptionReport>,
}

impl CertificationReport {
    /// Every checked condition holds at tolerance `tol`.
    pub fn kkt_feasible(&self, tol: f64) -> bool {
        self.certificate.feasible
            && self.kkt.dual_feas_min_eig >= -tol * (1.0 + self.kkt.second_eig.abs())
            && self.kkt.second_eig > 0.0
            && self.strict.as_ref().is_none_or(|s| s.pass)
    }
}

fn check_selection(data: &Dataset, selection: &[bool]) -> Result<Vec<usize>> {
    if selection.len() != data.n() {
        return Err(Error::DimensionMismatch(format!("selection has {} entries, n = {}", selection.len(), data.n())));
    }
    let rows = selected_indices(selection);
    if rows.is_empty() {
        return Err(Error::InvalidConfig("selection is empty".into()));
    }
    Ok(rows)
}

fn check_support(data: &Dataset, support: &[usize], lambda: f64) -> Result<()> {
    if support.is_empty() {
        return Err(Error::EmptySupport { lambda });
    }
    if let Some(&j) = support.iter().find(|&&j| j >= data.p()) {
        return Err(Error::DimensionMismatch(format!("support index {j} out of range for p = {}", data.p())));
    }
    Ok(())
}

/// Sum of the support-restricted lifted matrices over `rows`.
fn restricted_lift_sum(data: &Dataset, support: &[usize], rows: &[usize]) -> DMatrix<f64> {
    let xs = select_rows(&select_columns(&data.x, support), rows);
    let ys = select_entries(&data.y, rows);
    let k = support.len();
    let mut s = DMatrix::zeros(k + 1, k + 1);
    s.view_mut((0, 0), (k, k)).copy_from(&(xs.transpose() * &xs));
    let xty = xs.transpose() * &ys;
    for j in 0..k {
        s[(j, k)] = -xty[j];
        s[(k, j)] = -xty[j];
    }
    s[(k, k)] = ys.norm_squared();
    s
}

/// Subgradient of `||.||_1` at `theta` read off the refit stationarity
/// `X^T r = lambda (||theta||_1 + 1) omega`. Returns the clip count too.
fn subgradient(x: &DMatrix<f64>, y: &DVector<f64>, theta: &DVector<f64>, lambda: f64) -> (DVector<f64>, usize) {
    let corr = x.transpose() * (y - x * theta);
    let bound = lambda * (l1_norm(theta) + 1.0);
    let mut clipped = 0;
    let omega = DVector::from_fn(theta.len(), |j, _| {
        if theta[j] != 0.0 {
            theta[j].signum()
        } else if bound > 0.0 {
            let w = corr[j] / bound;
            if w.abs() > 1.0 {
                clipped += 1;
            }
            w.clamp(-1.0, 1.0)
        } else {
            0.0
        }
    });
    (omega, clipped)
}

/// Builds the witness dual variables for the selected rows and `theta_under` over `support`.
pub fn build_duals(
    data: &Dataset,
    selection: &[bool],
    theta_under: &DVector<f64>,
    lambda: f64,
    support: &[usize],
    tol: f64,
) -> Result<DualCertificate> {
    let rows = check_selection(data, selection)?;
    check_support(data, support, lambda)?;
    if theta_under.len() != support.len() {
        return Err(Error::DimensionMismatch(format!(
            "theta has {} entries for a support of size {}",
            theta_under.len(),
            support.len()
        )));
    }
    let k = support.len();
    let xs = select_columns(&data.x, support);
    let losses = (&data.y - &xs * theta_under).map(|r| r * r);

    let lo = rows.iter().map(|&i| losses[i]).fold(f64::NEG_INFINITY, f64::max);
    let hi = (0..data.n()).filter(|&i| !selection[i]).map(|i| losses[i]).fold(f64::INFINITY, f64::min);
    let nu = if hi.is_finite() { 0.5 * (lo + hi) } else { lo };
    let beta: Vec<f64> = (0..data.n()).map(|i| if selection[i] { 0.0 } else { losses[i] - nu }).collect();
    let gamma: Vec<f64> = (0..data.n()).map(|i| if selection[i] { nu - losses[i] } else { 0.0 }).collect();

    let (omega, omega_clipped) =
        subgradient(&select_rows(&xs, &rows), &select_entries(&data.y, &rows), theta_under, lambda);
    if omega_clipped > 0 {
        debug!("clipped {omega_clipped} subgradient entries into [-1, 1]");
    }
    let w1 = DVector::from_fn(k + 1, |j, _| if j < k { omega[j] } else { 1.0 });
    let zeta = &w1 * w1.transpose();

    let vt = lift_parameter(theta_under)?.v;
    let base = restricted_lift_sum(data, support, &rows) + &zeta * lambda;
    let mu_corner = -frobenius_inner(&base, &vt);
    let mut lambda_matrix = base;
    lambda_matrix[(k, k)] += mu_corner;

    let multipliers_ok = nu >= -tol && beta.iter().chain(gamma.iter()).all(|&v| v >= -tol * (1.0 + nu.abs()));
    let feasible = lo <= hi + tol * (1.0 + hi.abs().min(lo.abs())) && multipliers_ok;
    Ok(DualCertificate {
        support: support.to_vec(),
        theta_under: theta_under.iter().copied().collect(),
        nu,
        nu_interval: (lo, hi),
        beta,
        gamma,
        lambda_matrix,
        mu_corner,
        zeta,
        omega: omega.iter().copied().collect(),
        omega_clipped,
        feasible,
    })
}

/// Evaluates every KKT condition of the compact relaxation at the certificate.
///
/// The lifted sums are recomputed here sample by sample from dense lifted
/// matrices, independently of [`build_duals`].
pub fn kkt_residuals(cert: &DualCertificate, data: &Dataset, selection: &[bool], lambda: f64) -> Result<KKTReport> {
    check_selection(data, selection)?;
    let support = &cert.support;
    let k = support.len();
    if cert.lambda_matrix.nrows() != k + 1 || cert.beta.len() != data.n() {
        return Err(Error::DimensionMismatch("certificate does not match the data".into()));
    }
    let mut idx: Vec<usize> = support.clone();
    idx.push(data.p());
    let vt = cert.vartheta_under();

    let mut weighted = DMatrix::zeros(k + 1, k + 1);
    let mut stationarity_b_max: f64 = 0.0;
    for (i, &selected) in selection.iter().enumerate() {
        let a = submatrix(&data.lifted(i).a, &idx, &idx);
        let li = frobenius_inner(&a, &vt);
        stationarity_b_max = stationarity_b_max.max((li - cert.beta[i] + cert.gamma[i] - cert.nu).abs());
        if selected {
            weighted += a;
        }
    }
    let mut mu = DMatrix::zeros(k + 1, k + 1);
    mu[(k, k)] = cert.mu_corner;
    let resid = &weighted + &cert.zeta * lambda - &cert.lambda_matrix + mu;
    let stationarity_vartheta_norm = resid.norm() / weighted.norm().max(1.0);

    let b: Vec<f64> = selection.iter().map(|&s| if s { 1.0 } else { 0.0 }).collect();
    let m = b.iter().sum::<f64>();
    let scale = cert.mu_corner.abs().max(1.0);
    let mut comp_slack_max = frobenius_inner(&cert.lambda_matrix, &vt).abs() / scale;
    comp_slack_max = comp_slack_max.max((cert.nu * (m - b.iter().sum::<f64>())).abs());
    for (i, bi) in b.iter().enumerate() {
        comp_slack_max = comp_slack_max.max((cert.beta[i] * bi).abs()).max((cert.gamma[i] * (bi - 1.0)).abs());
    }

    let eig = sorted_eigenvalues(&cert.lambda_matrix);
    let theta1 = DVector::from_fn(k + 1, |j, _| if j < k { cert.theta_under[j] } else { 1.0 });
    let nullvec_residual = (&cert.lambda_matrix * theta1).norm();
    let multipliers_min = cert.beta.iter().chain(cert.gamma.iter()).copied().fold(cert.nu, f64::min);
    let primal_feas_ok = b.iter().all(|&v| (0.0..=1.0).contains(&v)) && sorted_eigenvalues(&vt)[0] >= -1e-12;

    Ok(KKTReport {
        stationarity_b_max,
        stationarity_vartheta_norm,
        comp_slack_max,
        dual_feas_min_eig: eig[0],
        nullvec_residual,
        second_eig: eig.get(1).copied().unwrap_or(f64::INFINITY),
        multipliers_min,
        primal_feas_ok,
    })
}

/// Eigen-bounds and mutual incoherence of the empirical covariance.
///
/// Uses the selected rows when `selection` is given, otherwise the rows labeled clean.
pub fn assumption_check(
    data: &Dataset,
    support: &[usize],
    selection: Option<&[bool]>,
    cfg: &CertifyConfig,
) -> Result<AssumptionReport> {
    check_support(data, support, 0.0)?;
    let rows = match selection {
        Some(sel) => check_selection(data, sel)?,
        None => data.indices_with(crate::model::Label::Clean),
    };
    if rows.is_empty() {
        return Err(Error::InvalidConfig("no rows to estimate the covariance from".into()));
    }
    let xr = select_rows(&data.x, &rows);
    let sigma = (xr.transpose() * &xr) / rows.len() as f64;
    let complement: Vec<usize> = (0..data.p()).filter(|j| !support.contains(j)).collect();
    let ss = submatrix(&sigma, support, support);
    let eig = sorted_eigenvalues(&ss);
    let (min_eig_ss, max_eig_ss) = (eig[0], eig[eig.len() - 1]);
    let chol = ss.clone().cholesky().filter(|_| min_eig_ss > 1e-12 * max_eig_ss.max(1e-300));
    let Some(chol) = chol else {
        let cond = if min_eig_ss > 0.0 { max_eig_ss / min_eig_ss } else { f64::INFINITY };
        return Err(Error::SingularSubmatrix { cond });
    };
    let incoherence = if complement.is_empty() {
        0.0
    } else {
        let scs = submatrix(&sigma, &complement, support);
        // (Sigma_SS^{-1} Sigma_SSc)^T = Sigma_ScS Sigma_SS^{-1}
        induced_inf_norm(&chol.solve(&scs.transpose()).transpose())
    };
    let (alpha1, alpha2, alpha_estimated) = match cfg.alpha {
        AlphaBounds::Known { alpha1, alpha2 } => (alpha1, alpha2, false),
        AlphaBounds::Estimated => (min_eig_ss, max_eig_ss, true),
    };
    Ok(AssumptionReport {
        support: support.to_vec(),
        rows_used: rows.len(),
        min_eig_ss,
        max_eig_ss,
        incoherence,
        kappa_implied: 1.0 - incoherence,
        alpha1,
        alpha2,
        alpha_estimated,
        min_eig_pass: min_eig_ss >= alpha1 / 2.0,
        max_eig_pass: max_eig_ss <= 1.5 * alpha2,
        incoherence_pass: incoherence <= 1.0 - cfg.kappa / 2.0,
    })
}

/// Off-support subgradient predicted by the witness construction.
///
/// With `e = y - X theta*` on the selected rows and `l = (lambda/m)(1 + ||theta_hat||_1)`,
/// `l * omega_bar = -S_{S^c S} S_{SS}^{-1} (X_S^T e / m - l * omega_tilde) + X_{S^c}^T e / m`.
pub fn strict_dual_feasibility(
    data: &Dataset,
    selection: &[bool],
    theta_hat: &DVector<f64>,
    lambda: f64,
    support: &[usize],
    kappa: f64,
) -> Result<StrictDualReport> {
    let rows = check_selection(data, selection)?;
    check_support(data, support, lambda)?;
    let theta_star = data
        .theta_star
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("strict dual feasibility needs theta_star".into()))?;
    if theta_hat.len() != data.p() {
        return Err(Error::DimensionMismatch(format!("theta_hat has {} entries, p = {}", theta_hat.len(), data.p())));
    }
    let threshold = 1.0 - kappa / 4.0;
    let complement: Vec<usize> = (0..data.p()).filter(|j| !support.contains(j)).collect();
    if complement.is_empty() {
        return Ok(StrictDualReport { omega_bar: Vec::new(), omega_bar_inf: 0.0, threshold, pass: true });
    }
    let m = rows.len() as f64;
    let xr = select_rows(&data.x, &rows);
    let yr = select_entries(&data.y, &rows);
    let e = &yr - &xr * theta_star;
    let xs = select_columns(&xr, support);
    let xc = select_columns(&xr, &complement);
    let theta_s = select_entries(theta_hat, support);
    let (omega_tilde, _) = subgradient(&xs, &yr, &theta_s, lambda);

    let scale = lambda / m * (1.0 + l1_norm(theta_hat));
    if !(scale > 0.0) {
        let omega_bar = vec![f64::INFINITY; complement.len()];
        return Ok(StrictDualReport { omega_bar, omega_bar_inf: f64::INFINITY, threshold, pass: false });
    }
    let sigma_ss = xs.transpose() * &xs / m;
    let sigma_cs = xc.transpose() * &xs / m;
    let chol = sigma_ss.clone().cholesky().ok_or_else(|| {
        let eig = sorted_eigenvalues(&sigma_ss);
        let cond = if eig[0] > 0.0 { eig[eig.len() - 1] / eig[0] } else { f64::INFINITY };
        Error::SingularSubmatrix { cond }
    })?;
    let inner = xs.transpose() * &e / m - omega_tilde * scale;
    let rhs = -(sigma_cs * chol.solve(&inner)) + xc.transpose() * &e / m;
    let omega_bar = rhs / scale;
    let omega_bar_inf = omega_bar.amax();
    Ok(StrictDualReport {
        omega_bar: omega_bar.iter().copied().collect(),
        omega_bar_inf,
        threshold,
        pass: omega_bar_inf <= threshold,
    })
}

/// Restricted refit on `support`, dual construction, KKT residuals, the
/// off-support bound (when `theta_star` is known) and the assumption diagnostics.
pub fn certify(
    data: &Dataset,
    selection: &[bool],
    lambda: f64,
    support: &[usize],
    cfg: &CertifyConfig,
) -> Result<CertificationReport> {
    let rows = check_selection(data, selection)?;
    check_support(data, support, lambda)?;
    let xs = select_rows(&select_columns(&data.x, support), &rows);
    let ys = select_entries(&data.y, &rows);
    let fit = refit_design(&xs, &ys, lambda, &DVector::zeros(support.len()), &cfg.refit)?;
    let certificate = build_duals(data, selection, &fit.theta, lambda, support, cfg.tol)?;
    let kkt = kkt_residuals(&certificate, data, selection, lambda)?;

    let mut padded = DVector::zeros(data.p());
    for (a, &j) in support.iter().enumerate() {
        padded[j] = fit.theta[a];
    }
    let strict = match data.theta_star {
        Some(_) => match strict_dual_feasibility(data, selection, &padded, lambda, support, cfg.kappa) {
            Ok(r) => Some(r),
            Err(Error::SingularSubmatrix { cond }) => {
                debug!("off-support bound skipped: singular support covariance ({cond:.3e})");
                None
            }
            Err(e) => return Err(e),
        },
        None => None,
    };
    let assumptions = match assumption_check(data, support, Some(selection), cfg) {
        Ok(r) => Some(r),
        Err(Error::SingularSubmatrix { cond }) => {
            debug!("assumption check skipped: singular support covariance ({cond:.3e})");
            None
        }
        Err(e) => return Err(e),
    };
    Ok(CertificationReport { lambda, certificate, kkt, strict, assumptions })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvexityWitness {
    pub trials: usize,
    pub min_gap: f64,
    pub bilinear_max_abs: f64,
}

/// Left side of the invexity inequality for `h(b, V) = sum_i b_i <A_i, V> + lambda ||V||_1`
/// with kernel `eta_b = xi (b - b_bar)`, `xi_i = <A_i, V> / <A_i, V_bar>`, `eta_V = V - V_bar`.
///
/// Returns `(gap of h, gap of the lambda-free part)`.
pub fn invexity_gap(
    data: &Dataset,
    lambda: f64,
    b: &DVector<f64>,
    v: &Vartheta,
    b_bar: &DVector<f64>,
    v_bar: &Vartheta,
) -> (f64, f64) {
    let l = data.lifted_losses(&v.v);
    let l_bar = data.lifted_losses(&v_bar.v);
    let grad_v = crate::solver::grad_vartheta(b_bar, data).expect("dimensions checked by caller");
    let eta_v = &v.v - &v_bar.v;
    let mut bilinear = b.dot(&l) - b_bar.dot(&l_bar) - frobenius_inner(&eta_v, &grad_v);
    for i in 0..data.n() {
        let xi = l[i] / l_bar[i];
        bilinear -= xi * (b[i] - b_bar[i]) * l_bar[i];
    }
    let sign_bar = v_bar.v.map(f64::signum);
    let penalty = lambda * (v.entrywise_l1() - v_bar.entrywise_l1() - frobenius_inner(&eta_v, &sign_bar));
    (bilinear + penalty, bilinear)
}

/// Samples feasible pairs and evaluates [`invexity_gap`] on each.
pub fn invexity_witness(data: &Dataset, m: usize, lambda: f64, trials: usize, seed: u64) -> Result<InvexityWitness> {
    if trials == 0 {
        return Err(Error::InvalidConfig("trials must be >= 1".into()));
    }
    let set = BFeasibleSet::new(data.n(), m)?;
    let p = data.p();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw_b = |rng: &mut ChaCha8Rng| -> Result<DVector<f64>> {
        let raw = DVector::from_fn(data.n(), |_, _| rng.random_range(0.0..=1.0));
        project_b(&raw, &set)
    };
    let draw_v = |rng: &mut ChaCha8Rng| -> Result<Vartheta> {
        let theta = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        // PSD noise with a zero last row keeps the corner at one
        let g = DMatrix::from_fn(p + 1, 2, |i, _| if i < p { 0.3 * rng.sample::<f64, _>(StandardNormal) } else { 0.0 });
        let base = lift_parameter(&theta)?.v;
        Ok(Vartheta { v: base + &g * g.transpose() })
    };

    const MAX_ATTEMPTS: usize = 1000;
    let mut min_gap = f64::INFINITY;
    let mut bilinear_max_abs: f64 = 0.0;
    for _ in 0..trials {
        let b = draw_b(&mut rng)?;
        let b_bar = draw_b(&mut rng)?;
        let v = draw_v(&mut rng)?;
        let mut attempts = 0;
        let v_bar = loop {
            attempts += 1;
            let cand = draw_v(&mut rng)?;
            let l = data.lifted_losses(&cand.v);
            let bounded = (0..data.n()).all(|i| {
                let zz = data.x.row(i).norm_squared() + data.y[i] * data.y[i];
                l[i] > 1e-6 * (1.0 + zz)
            });
            if bounded {
                break cand;
            }
            if attempts >= MAX_ATTEMPTS {
                return Err(Error::RejectionExhausted { attempts });
            }
        };
        let (gap, bilinear) = invexity_gap(data, lambda, &b, &v, &b_bar, &v_bar);
        min_gap = min_gap.min(gap);
        bilinear_max_abs = bilinear_max_abs.max(bilinear.abs());
    }
    Ok(InvexityWitness { trials, min_gap, bilinear_max_abs })
}

/// `G = g(b, theta) - g(b_bar, theta_bar) - <grad_b g, b - b_bar> - <grad_theta g, theta - theta_bar>`
/// for `g(b, theta) = sum_i b_i (y_i - <x_i, theta>)^2`, evaluated at `(b_bar, theta_bar)`.
pub fn convexity_gap(
    data: &Dataset,
    b: &DVector<f64>,
    b_bar: &DVector<f64>,
    theta: &DVector<f64>,
    theta_bar: &DVector<f64>,
) -> f64 {
    let f = data.residual_losses(theta);
    let f_bar = data.residual_losses(theta_bar);
    let r_bar = &data.y - &data.x * theta_bar;
    let grad_theta = data.x.transpose() * r_bar.component_mul(b_bar) * -2.0;
    b.dot(&f) - b_bar.dot(&f_bar) - f_bar.dot(&(b - b_bar)) - grad_theta.dot(&(theta - theta_bar))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonconvexityWitness {
    /// Coordinate carrying the perturbation.
    pub t: usize,
    pub u: f64,
    pub w_pos: f64,
    pub w_neg: f64,
    pub g_pos: f64,
    pub g_neg: f64,
}

/// Two points of the construction `b = 0`, `b_bar = 1/2`, `theta = u e_t`,
/// `theta_bar = w e_t` where [`convexity_gap`] takes opposite signs.
///
/// Along this family `G` is a quadratic in `w` with roots `w = u` and
/// `w = c / d` (`c = sum_i y_i x_it`, `d = sum_i x_it^2`); `u` is placed away from
/// `c / d` and `w` is taken once between and once beyond the two roots.
pub fn nonconvexity_witness(data: &Dataset) -> Result<NonconvexityWitness> {
    let t = (0..data.p()).find(|&j| data.x.column(j).iter().any(|&v| v != 0.0)).ok_or(Error::AllZeroColumn)?;
    let col = data.x.column(t);
    let d = col.norm_squared();
    let c = col.dot(&data.y);
    let root = c / d;
    let delta = 1.0f64.max(1.0 / d.sqrt());
    let u = root + delta;
    let b = DVector::zeros(data.n());
    let b_bar = DVector::from_element(data.n(), 0.5);
    let at = |w: f64| {
        let mut theta = DVector::zeros(data.p());
        theta[t] = u;
        let mut theta_bar = DVector::zeros(data.p());
        theta_bar[t] = w;
        convexity_gap(data, &b, &b_bar, &theta, &theta_bar)
    };
    let (wa, wb) = (u - 0.5 * delta, u + delta);
    let (ga, gb) = (at(wa), at(wb));
    let (w_pos, g_pos, w_neg, g_neg) = if ga > gb { (wa, ga, wb, gb) } else { (wb, gb, wa, ga) };
    Ok(NonconvexityWitness { t, u, w_pos, w_neg, g_pos, g_neg })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, GenSpec};
    use crate::model::{GroundTruthConfig, Label};
    use crate::oracle::{enumerate_best_subset, OracleConfig};

    fn well_separated(seed: u64, p: usize, k: usize, r: usize, n_out: usize) -> Dataset {
        let mut spec = GenSpec::new(GroundTruthConfig::new(p, k), r, n_out, seed);
        spec.outlier_response_range = (20.0, 25.0);
        generate(&spec).unwrap()
    }

    fn clean_selection(data: &Dataset) -> Vec<bool> {
        data.labels.iter().map(|l| *l == Label::Clean).collect()
    }

    #[test]
    fn noiseless_exact_theta_gives_feasible_interval() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.5, -1.0]);
        let theta = DVector::from_vec(vec![1.0, -2.0]);
        let mut y = &x * &theta;
        y[3] += 7.0;
        let labels = vec![Label::Clean, Label::Clean, Label::Clean, Label::Outlier];
        let data = Dataset::new(x, y, labels).unwrap().with_theta_star(theta.clone()).unwrap();
        let sel = clean_selection(&data);
        let cert = build_duals(&data, &sel, &theta, 0.0, &[0, 1], 1e-8).unwrap();
        assert!(cert.feasible);
        assert!(cert.nu_interval.0.abs() < 1e-20);
        assert!((cert.nu_interval.1 - 49.0).abs() < 1e-10);
        assert!(cert.beta[3] > 0.0 && cert.gamma[..3].iter().all(|&g| g > 0.0));
    }

    #[test]
    fn selecting_the_gross_outlier_breaks_the_interval() {
        let data = well_separated(3, 3, 2, 12, 4);
        let mut sel = clean_selection(&data);
        let first_clean = sel.iter().position(|&s| s).unwrap();
        let worst = data.indices_with(Label::Outlier)[0];
        sel[first_clean] = false;
        sel[worst] = true;
        let support = [0usize, 1, 2];
        let report = certify(&data, &sel, 0.5, &support, &CertifyConfig::default()).unwrap();
        assert!(!report.certificate.feasible);
    }

    #[test]
    fn construction_identities_hold_to_machine_precision() {
        for seed in 0..5 {
            let data = well_separated(seed, 6, 2, 30, 10);
            let support = crate::linalg::support_of(data.theta_star.as_ref().unwrap(), 0.0);
            let sel = clean_selection(&data);
            let report = certify(&data, &sel, 1.0, &support, &CertifyConfig::default()).unwrap();
            let kkt = &report.kkt;
            assert!(kkt.stationarity_vartheta_norm <= 1e-12, "{kkt:?}");
            assert!(kkt.comp_slack_max <= 1e-10, "{kkt:?}");
            assert!(kkt.stationarity_b_max <= 1e-10 * (1.0 + report.certificate.nu), "{kkt:?}");
            assert!(kkt.nullvec_residual <= 1e-8, "{kkt:?}");
            assert!(kkt.second_eig > 0.0);
            assert!(report.certificate.feasible);
            assert!(report.certificate.zeta.amax() <= 1.0 + 1e-15);
        }
    }

    #[test]
    fn lambda_matrix_psd_with_one_dimensional_kernel() {
        let data = well_separated(11, 5, 3, 40, 10);
        let support = crate::linalg::support_of(data.theta_star.as_ref().unwrap(), 0.0);
        let report = certify(&data, &clean_selection(&data), 2.0, &support, &CertifyConfig::default()).unwrap();
        let scale = report.certificate.lambda_matrix.norm();
        assert!(report.kkt.dual_feas_min_eig >= -1e-10 * scale);
        assert!(report.kkt.second_eig > 1e-6 * scale);
    }

    #[test]
    fn oracle_solution_certifies_on_tiny_instance() {
        let data = well_separated(5, 4, 2, 6, 2);
        let support = crate::linalg::support_of(data.theta_star.as_ref().unwrap(), 0.0);
        let oracle = enumerate_best_subset(&data, 4, 0.5, Some(&support), &OracleConfig::default()).unwrap();
        let sel = oracle.selection(data.n());
        let report = certify(&data, &sel, 0.5, &support, &CertifyConfig::default()).unwrap();
        assert!(report.certificate.feasible, "{:?}", report.certificate.nu_interval);
        let got = DVector::from_column_slice(&report.certificate.theta_under);
        let want = select_entries(&DVector::from_column_slice(&oracle.theta_under), &support);
        assert!((got - want).norm() < 1e-6);
    }

    #[test]
    fn identity_covariance_is_well_conditioned_and_incoherent() {
        let gt = GroundTruthConfig::new(10, 3);
        let data = generate(&GenSpec::new(gt, 10_000, 0, 1)).unwrap();
        let support = crate::linalg::support_of(data.theta_star.as_ref().unwrap(), 0.0);
        let cfg = CertifyConfig::default().with_population_covariance(&DMatrix::identity(10, 10), &support);
        let rep = assumption_check(&data, &support, None, &cfg).unwrap();
        assert!(rep.min_eig_ss >= 0.9 && rep.max_eig_ss <= 1.1, "{rep:?}");
        assert!(rep.incoherence <= 0.2, "{rep:?}");
        assert!(rep.pass() && !rep.alpha_estimated);
    }

    #[test]
    fn identical_rows_are_singular_or_fail() {
        let x = DMatrix::from_fn(6, 3, |_, j| (j + 1) as f64);
        let data = Dataset::unlabeled(x, DVector::zeros(6)).unwrap();
        let cfg = CertifyConfig { alpha: AlphaBounds::Known { alpha1: 1.0, alpha2: 1.0 }, ..Default::default() };
        match assumption_check(&data, &[0, 1], None, &cfg) {
            Err(Error::SingularSubmatrix { .. }) => {}
            Ok(rep) => assert!(!rep.pass()),
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn noiseless_off_support_bound_is_the_incoherence_term() {
        let gt = GroundTruthConfig { sigma_e: 0.0, ..GroundTruthConfig::new(8, 2) };
        let data = generate(&GenSpec::new(gt, 200, 0, 4)).unwrap();
        let ts = data.theta_star.clone().unwrap();
        let support = crate::linalg::support_of(&ts, 0.0);
        let sel = vec![true; data.n()];
        let rep = strict_dual_feasibility(&data, &sel, &ts, 3.0, &support, 0.5).unwrap();
        let assume = assumption_check(&data, &support, Some(&sel), &CertifyConfig::default()).unwrap();
        // with e = 0 the bound reduces to Sigma_ScS Sigma_SS^{-1} sign(theta_S)
        let xs = select_columns(&data.x, &support);
        let comp: Vec<usize> = (0..8).filter(|j| !support.contains(j)).collect();
        let xc = select_columns(&data.x, &comp);
        let signs = select_entries(&ts, &support).map(f64::signum);
        let direct = (xc.transpose() * &xs) * (xs.transpose() * &xs).try_inverse().unwrap() * signs;
        assert!((direct.amax() - rep.omega_bar_inf).abs() < 1e-10);
        assert!(rep.omega_bar_inf <= assume.incoherence + 1e-12);
    }

    #[test]
    fn tiny_lambda_fails_the_off_support_bound() {
        let data = generate(&GenSpec::new(GroundTruthConfig::new(20, 3), 300, 0, 2)).unwrap();
        let ts = data.theta_star.clone().unwrap();
        let support = crate::linalg::support_of(&ts, 0.0);
        let sel = vec![true; data.n()];
        let rep = strict_dual_feasibility(&data, &sel, &ts, 1e-6, &support, 0.5).unwrap();
        assert!(!rep.pass);
    }

    #[test]
    fn strict_bound_requires_theta_star() {
        let data = Dataset::unlabeled(DMatrix::identity(3, 3), DVector::zeros(3)).unwrap();
        let err = strict_dual_feasibility(&data, &[true; 3], &DVector::zeros(3), 1.0, &[0], 0.5);
        assert!(matches!(err, Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn empty_support_is_reported() {
        let data = Dataset::unlabeled(DMatrix::identity(3, 3), DVector::zeros(3)).unwrap();
        let err = build_duals(&data, &[true; 3], &DVector::zeros(0), 1.0, &[], 1e-8);
        assert!(matches!(err, Err(Error::EmptySupport { .. })));
    }

    #[test]
    fn invexity_identity_and_gap() {
        let data = well_separated(1, 4, 2, 6, 2);
        let w = invexity_witness(&data, 4, 0.7, 200, 9).unwrap();
        assert!(w.bilinear_max_abs <= 1e-9, "{w:?}");
        assert!(w.min_gap >= -1e-9, "{w:?}");
    }

    #[test]
    fn invexity_gap_vanishes_at_equal_points() {
        let data = well_separated(2, 3, 1, 5, 2);
        let b = DVector::from_element(data.n(), 0.6);
        let v = lift_parameter(&DVector::from_vec(vec![0.3, -0.2, 1.0])).unwrap();
        let (gap, bilinear) = invexity_gap(&data, 1.0, &b, &v, &b, &v);
        assert_eq!(gap, 0.0);
        assert_eq!(bilinear, 0.0);
    }

    #[test]
    fn nonconvexity_single_sample_closed_form() {
        // one sample x = 1, y = 1: G(w) = (1 - w)(u - w) up to sign, roots at 1 and u
        let data = Dataset::unlabeled(DMatrix::from_element(1, 1, 1.0), DVector::from_element(1, 1.0)).unwrap();
        let w = nonconvexity_witness(&data).unwrap();
        assert!(w.g_pos > 1e-6 && w.g_neg < -1e-6, "{w:?}");
        let b = DVector::zeros(1);
        let b_bar = DVector::from_element(1, 0.5);
        let g = |u: f64, wv: f64| {
            convexity_gap(&data, &b, &b_bar, &DVector::from_element(1, u), &DVector::from_element(1, wv))
        };
        assert!((g(3.0, 0.0) - 3.0).abs() < 1e-12);
        assert!((g(3.0, 2.0) + 1.0).abs() < 1e-12);
        assert_eq!(g(1.7, 1.7), 0.0);
    }

    #[test]
    fn nonconvexity_grid_scan_finds_both_signs() {
        let data = well_separated(8, 5, 2, 20, 5);
        let w = nonconvexity_witness(&data).unwrap();
        assert!(w.g_pos > 1e-6 && w.g_neg < -1e-6);
        let b = DVector::zeros(data.n());
        let b_bar = DVector::from_element(data.n(), 0.5);
        let mut theta = DVector::zeros(data.p());
        theta[w.t] = w.u;
        let values: Vec<f64> = (-40..=40)
            .map(|s| {
                let mut tb = DVector::zeros(data.p());
                tb[w.t] = w.u + 0.25 * s as f64;
                convexity_gap(&data, &b, &b_bar, &theta, &tb)
            })
            .collect();
        assert!(values.iter().any(|&g| g > 0.0) && values.iter().any(|&g| g < 0.0));
    }

    #[test]
    fn nonconvexity_needs_a_nonzero_column() {
        let data = Dataset::unlabeled(DMatrix::zeros(3, 2), DVector::from_element(3, 1.0)).unwrap();
        assert!(matches!(nonconvexity_witness(&data), Err(Error::AllZeroColumn)));
    }

    #[test]
    fn certificate_round_trips_through_json() {
        let data = well_separated(6, 4, 2, 10, 3);
        let support = crate::linalg::support_of(data.theta_star.as_ref().unwrap(), 0.0);
        let report = certify(&data, &clean_selection(&data), 0.8, &support, &CertifyConfig::default()).unwrap();
        let text = serde_json::to_string(&report).unwrap();
        assert!(text.contains("\"Lambda\""));
        let back: CertificationReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back.certificate.support, report.certificate.support);
        assert_eq!(back.kkt.second_eig, report.kkt.second_eig);
    }
}
