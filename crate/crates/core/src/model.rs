//! Domain types and the lifting algebra.
//!
//! A sample `(x, y)` has squared loss `(y - <x, theta>)^2`. Writing
//! `z = [x; -y]` and `V = [theta; 1][theta; 1]^T`, the same loss is the linear
//! functional `<z z^T, V>`. The relaxation replaces the rank-one `V` by any
//! PSD matrix whose bottom-right corner equals one.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::linalg;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Clean,
    Outlier,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Clean => "clean",
            Label::Outlier => "outlier",
        }
    }
}

impl std::str::FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "clean" => Ok(Label::Clean),
            "outlier" => Ok(Label::Outlier),
            other => Err(Error::InvalidConfig(format!("unknown sample label {other:?}"))),
        }
    }
}

/// Parameters of the clean linear model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthConfig {
    pub p: usize,
    pub k: usize,
    /// L1 budget `M` on the ground-truth parameter.
    #[serde(rename = "M")]
    pub l1_budget: f64,
    /// Sub-Gaussian parameter of the predictors (1 for standard normal rows).
    pub sigma: f64,
    /// Standard deviation of the additive noise.
    pub sigma_e: f64,
    /// Predictor covariance; `None` means the identity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<DMatrix<f64>>,
}

impl GroundTruthConfig {
    pub fn new(p: usize, k: usize) -> Self {
        Self { p, k, l1_budget: 1.1 * k as f64, sigma: 1.0, sigma_e: 0.1, covariance: None }
    }

    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        self.covariance.clone().unwrap_or_else(|| DMatrix::identity(self.p, self.p))
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > self.p {
            return Err(Error::InvalidConfig(format!("need 0 < k <= p, got k = {}, p = {}", self.k, self.p)));
        }
        if !(self.l1_budget >= 0.0) {
            return Err(Error::InvalidConfig("L1 budget M must be >= 0".into()));
        }
        if !(self.sigma_e >= 0.0) || !(self.sigma > 0.0) {
            return Err(Error::InvalidConfig("sigma must be > 0 and sigma_e >= 0".into()));
        }
        if let Some(cov) = &self.covariance {
            if cov.nrows() != self.p || cov.ncols() != self.p {
                return Err(Error::DimensionMismatch(format!(
                    "covariance is {}x{}, expected {}x{}",
                    cov.nrows(),
                    cov.ncols(),
                    self.p,
                    self.p
                )));
            }
            if !linalg::is_symmetric(cov, 1e-10) {
                return Err(Error::InvalidConfig("covariance must be symmetric".into()));
            }
            if linalg::min_eigenvalue(cov) < -1e-10 {
                return Err(Error::InvalidConfig("covariance must be positive semidefinite".into()));
            }
        }
        Ok(())
    }
}

/// Generation metadata carried alongside a synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenMeta {
    pub p: usize,
    pub k: usize,
    #[serde(rename = "M")]
    pub l1_budget: f64,
    pub sigma: f64,
    pub sigma_e: f64,
    pub seed: u64,
}

/// Design matrix, responses and clean/outlier labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub labels: Vec<Label>,
    pub theta_star: Option<DVector<f64>>,
    /// Number of clean samples.
    pub r: usize,
    /// Realized loss gap between outliers and clean samples at `theta_star`.
    pub rho: Option<f64>,
    pub meta: Option<GenMeta>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, labels: Vec<Label>) -> Result<Self> {
        if x.nrows() != y.len() || y.len() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "X has {} rows, y has {} entries, {} labels",
                x.nrows(),
                y.len(),
                labels.len()
            )));
        }
        ensure_finite(x.iter(), "design matrix")?;
        ensure_finite(y.iter(), "responses")?;
        let r = labels.iter().filter(|l| **l == Label::Clean).count();
        Ok(Self { x, y, labels, theta_star: None, r, rho: None, meta: None })
    }

    /// Unlabeled data; every sample is tagged clean.
    pub fn unlabeled(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let n = y.len();
        Self::new(x, y, vec![Label::Clean; n])
    }

    pub fn with_theta_star(mut self, theta: DVector<f64>) -> Result<Self> {
        if theta.len() != self.p() {
            return Err(Error::DimensionMismatch(format!(
                "theta_star has {} entries, data has p = {}",
                theta.len(),
                self.p()
            )));
        }
        self.theta_star = Some(theta);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_outliers(&self) -> usize {
        self.n() - self.r
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.x.row(i).transpose()
    }

    pub fn indices_with(&self, label: Label) -> Vec<usize> {
        self.labels.iter().enumerate().filter_map(|(i, l)| (*l == label).then_some(i)).collect()
    }

    /// Dense lifted matrix of sample `i`.
    pub fn lifted(&self, i: usize) -> LiftedSample {
        LiftedSample::from_parts(&self.row(i), self.y[i])
    }

    /// Per-sample squared residuals `(y_i - <x_i, theta>)^2`.
    pub fn residual_losses(&self, theta: &DVector<f64>) -> DVector<f64> {
        let r = &self.y - &self.x * theta;
        r.map(|v| v * v)
    }

    /// `<A_i, V>` for every sample, without materializing any `A_i`.
    pub fn lifted_losses(&self, v: &DMatrix<f64>) -> DVector<f64> {
        let p = self.p();
        let top = v.view((0, 0), (p, p));
        let col = v.view((0, p), (p, 1));
        let corner = v[(p, p)];
        let xv = &self.x * top;
        let xc = &self.x * col;
        DVector::from_fn(self.n(), |i, _| {
            let quad = xv.row(i).dot(&self.x.row(i));
            let yi = self.y[i];
            quad - 2.0 * yi * xc[i] + yi * yi * corner
        })
    }
}

/// Symmetric `(p+1) x (p+1)` matrix `A = z z^T` with `z = [x; -y]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LiftedSample {
    pub a: DMatrix<f64>,
}

impl LiftedSample {
    fn from_parts(x: &DVector<f64>, y: f64) -> Self {
        let p = x.len();
        let z = DVector::from_fn(p + 1, |i, _| if i < p { x[i] } else { -y });
        Self { a: &z * z.transpose() }
    }
}

/// Lifted decision matrix: PSD with its bottom-right corner pinned to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vartheta {
    pub v: DMatrix<f64>,
}

impl Vartheta {
    /// Checks symmetry, the unit corner and positive semidefiniteness within `tol`.
    pub fn new(v: DMatrix<f64>, tol: f64) -> Result<Self> {
        if !v.is_square() || v.nrows() == 0 {
            return Err(Error::DimensionMismatch("vartheta must be square and non-empty".into()));
        }
        ensure_finite(v.iter(), "vartheta")?;
        if !linalg::is_symmetric(&v, tol.max(1e-12)) {
            return Err(Error::Degenerate("vartheta is not symmetric".into()));
        }
        let c = v.nrows() - 1;
        if (v[(c, c)] - 1.0).abs() > tol {
            return Err(Error::Degenerate(format!("vartheta corner is {}, expected 1", v[(c, c)])));
        }
        let min_eig = linalg::min_eigenvalue(&v);
        if min_eig < -tol {
            return Err(Error::Degenerate(format!("vartheta has eigenvalue {min_eig:.3e}")));
        }
        Ok(Self { v })
    }

    /// Wraps a matrix the caller already knows to be feasible.
    pub(crate) fn from_matrix_unchecked(v: DMatrix<f64>) -> Self {
        Self { v }
    }

    pub fn p(&self) -> usize {
        self.v.nrows() - 1
    }

    pub fn corner(&self) -> f64 {
        let c = self.p();
        self.v[(c, c)]
    }

    pub fn entrywise_l1(&self) -> f64 {
        linalg::entrywise_l1(&self.v)
    }
}

/// Result of reading a parameter vector back out of a lifted matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Extraction {
    pub theta: DVector<f64>,
    /// `lambda_2(V) / lambda_1(V)`; zero for an exactly rank-one matrix.
    pub rank1_gap: f64,
    /// Set when `rank1_gap` exceeds the requested tolerance.
    pub rank_warning: bool,
}

pub const DEFAULT_RANK_TOL: f64 = 1e-3;

/// `(y - <x, theta>)^2`
pub fn squared_loss(x: &DVector<f64>, y: f64, theta: &DVector<f64>) -> Result<f64> {
    if x.len() != theta.len() {
        return Err(Error::DimensionMismatch(format!("x has {} entries, theta has {}", x.len(), theta.len())));
    }
    let r = y - x.dot(theta);
    Ok(r * r)
}

pub fn lift_sample(x: &DVector<f64>, y: f64) -> Result<LiftedSample> {
    ensure_finite(x.iter().chain(std::iter::once(&y)), "sample")?;
    Ok(LiftedSample::from_parts(x, y))
}

/// `[theta; 1][theta; 1]^T`
pub fn lift_parameter(theta: &DVector<f64>) -> Result<Vartheta> {
    ensure_finite(theta.iter(), "theta")?;
    let p = theta.len();
    let z = DVector::from_fn(p + 1, |i, _| if i < p { theta[i] } else { 1.0 });
    Ok(Vartheta::from_matrix_unchecked(&z * z.transpose()))
}

/// Reads `theta` from the last column and reports how far `V` is from rank one.
pub fn extract_theta(vartheta: &Vartheta, rank_tol: f64) -> Result<Extraction> {
    let p = vartheta.p();
    let eig = linalg::sorted_eigenvalues(&vartheta.v);
    let largest = *eig.last().ok_or_else(|| Error::Degenerate("empty vartheta".into()))?;
    if !(largest > 0.0) {
        return Err(Error::Degenerate("vartheta has no positive eigenvalue".into()));
    }
    let second = if eig.len() >= 2 { eig[eig.len() - 2].max(0.0) } else { 0.0 };
    let rank1_gap = second / largest;
    let corner = vartheta.corner();
    let theta = DVector::from_fn(p, |i, _| vartheta.v[(i, p)] / corner);
    Ok(Extraction { theta, rank1_gap, rank_warning: rank1_gap > rank_tol })
}

/// `sum_i b_i <A_i, V> + lambda * ||V||_1` with the entry-wise norm over all entries.
pub fn objective(b: &DVector<f64>, vartheta: &Vartheta, data: &Dataset, lambda: f64) -> Result<f64> {
    if b.len() != data.n() || vartheta.p() != data.p() {
        return Err(Error::DimensionMismatch(format!(
            "b has {} entries for n = {}, vartheta is for p = {} with data p = {}",
            b.len(),
            data.n(),
            vartheta.p(),
            data.p()
        )));
    }
    let losses = data.lifted_losses(&vartheta.v);
    Ok(b.dot(&losses) + lambda * vartheta.entrywise_l1())
}
