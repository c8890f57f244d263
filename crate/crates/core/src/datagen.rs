//! Synthetic clean/outlier data.
//!
//! Clean rows follow `y = <x, theta*> + e` with zero-mean predictors of
//! covariance `Sigma`. Outlier rows are drawn uniformly from fixed boxes and
//! then resampled until every outlier's loss at `theta*` exceeds every clean
//! loss by more than `min_rho`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::l1_norm;
use crate::model::{Dataset, GenMeta, GroundTruthConfig, Label};

/// Distribution of the standardized predictor entries before mixing by `Sigma^{1/2}`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorDistribution {
    #[default]
    Gaussian,
    /// Independent +-1 entries; another sub-Gaussian family.
    Rademacher,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub ground_truth: GroundTruthConfig,
    /// Number of clean samples.
    pub r: usize,
    pub n_outliers: usize,
    #[serde(default = "default_predictor_range")]
    pub outlier_predictor_range: (f64, f64),
    #[serde(default = "default_response_range")]
    pub outlier_response_range: (f64, f64),
    pub seed: u64,
    #[serde(default = "default_max_resamples")]
    pub max_resamples: usize,
    /// Outliers must beat every clean loss by strictly more than this.
    #[serde(default)]
    pub min_rho: f64,
    #[serde(default)]
    pub predictors: PredictorDistribution,
}

fn default_predictor_range() -> (f64, f64) {
    (0.0, 1.0)
}

fn default_response_range() -> (f64, f64) {
    (0.0, 5.0)
}

fn default_max_resamples() -> usize {
    100
}

impl GenSpec {
    pub fn new(ground_truth: GroundTruthConfig, r: usize, n_outliers: usize, seed: u64) -> Self {
        Self {
            ground_truth,
            r,
            n_outliers,
            outlier_predictor_range: default_predictor_range(),
            outlier_response_range: default_response_range(),
            seed,
            max_resamples: default_max_resamples(),
            min_rho: 0.0,
            predictors: PredictorDistribution::Gaussian,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ground_truth.validate()?;
        if self.r == 0 {
            return Err(Error::InvalidConfig("need at least one clean sample".into()));
        }
        for (name, (lo, hi)) in [
            ("outlier_predictor_range", self.outlier_predictor_range),
            ("outlier_response_range", self.outlier_response_range),
        ] {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be a finite nonempty interval")));
            }
        }
        if !(self.min_rho >= 0.0) {
            return Err(Error::InvalidConfig("min_rho must be >= 0".into()));
        }
        Ok(())
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

const STREAM_THETA: u64 = 0;
const STREAM_CLEAN: u64 = 1;
const STREAM_OUTLIERS: u64 = 2;
const STREAM_RESAMPLE: u64 = 3;
const STREAM_SHUFFLE: u64 = 4;

/// Clean-sample count `ceil(1.1 * 10^1.5 * ln^2 p)` used by the recovery experiments.
pub fn default_clean_count(p: usize) -> usize {
    let l = (p as f64).ln();
    (1.1 * 10f64.powf(1.5) * l * l).ceil() as usize
}

/// Selection size `ceil(10^c * ln^2 p)`.
pub fn selection_size(p: usize, c: f64) -> usize {
    let l = (p as f64).ln();
    (10f64.powf(c) * l * l).ceil() as usize
}

/// Draws a `k`-sparse parameter with magnitudes in `[0.1, 1.1]` and random signs.
///
/// Returns the vector and the factor it was scaled by to respect the L1 budget
/// (1 when the budget did not bind).
pub fn gen_theta_star(spec: &GenSpec) -> Result<(DVector<f64>, f64)> {
    let gt = &spec.ground_truth;
    gt.validate()?;
    let mut rng = spec.rng(STREAM_THETA);
    let mut positions = index::sample(&mut rng, gt.p, gt.k).into_vec();
    positions.sort_unstable();
    let mut theta = DVector::zeros(gt.p);
    for j in positions {
        let magnitude = rng.random_range(0.1..=1.1);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        theta[j] = sign * magnitude;
    }
    let norm = l1_norm(&theta);
    let scale = if norm > gt.l1_budget && norm > 0.0 { gt.l1_budget / norm } else { 1.0 };
    if scale != 1.0 {
        log::debug!("theta* rescaled by {scale} to meet the L1 budget {}", gt.l1_budget);
        theta *= scale;
    }
    Ok((theta, scale))
}

fn covariance_root(gt: &GroundTruthConfig) -> Option<DMatrix<f64>> {
    let cov = gt.covariance.as_ref()?;
    let eig = SymmetricEigen::new(cov.clone());
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let q = &eig.eigenvectors;
    Some(q * DMatrix::from_diagonal(&roots) * q.transpose())
}

fn draw_standard(rng: &mut ChaCha8Rng, dist: PredictorDistribution) -> f64 {
    match dist {
        PredictorDistribution::Gaussian => StandardNormal.sample(rng),
        PredictorDistribution::Rademacher => {
            if rng.random_bool(0.5) {
                1.0
            } else {
                -1.0
            }
        }
    }
}

/// `r` rows from the clean linear model.
pub fn gen_clean(spec: &GenSpec, theta_star: &DVector<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let gt = &spec.ground_truth;
    if theta_star.len() != gt.p {
        return Err(Error::DimensionMismatch(format!("theta* has {} entries, p = {}", theta_star.len(), gt.p)));
    }
    crate::error::ensure_finite(theta_star.iter(), "theta*")?;
    let mut rng = spec.rng(STREAM_CLEAN);
    let z = DMatrix::from_fn(spec.r, gt.p, |_, _| draw_standard(&mut rng, spec.predictors));
    let x = match covariance_root(gt) {
        Some(root) => z * root,
        None => z,
    };
    let mut y = &x * theta_star;
    if gt.sigma_e > 0.0 {
        let noise = Normal::new(0.0, gt.sigma_e).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        for v in y.iter_mut() {
            *v += noise.sample(&mut rng);
        }
    }
    Ok((x, y))
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

fn fill_outlier_row(rng: &mut ChaCha8Rng, spec: &GenSpec, x: &mut DMatrix<f64>, y: &mut DVector<f64>, i: usize) {
    for j in 0..x.ncols() {
        x[(i, j)] = uniform(rng, spec.outlier_predictor_range);
    }
    y[i] = uniform(rng, spec.outlier_response_range);
}

/// Outlier rows with i.i.d. uniform entries on the configured ranges.
pub fn gen_outliers(spec: &GenSpec) -> Result<(DMatrix<f64>, DVector<f64>)> {
    spec.validate()?;
    let mut rng = spec.rng(STREAM_OUTLIERS);
    let mut x = DMatrix::zeros(spec.n_outliers, spec.ground_truth.p);
    let mut y = DVector::zeros(spec.n_outliers);
    for i in 0..spec.n_outliers {
        fill_outlier_row(&mut rng, spec, &mut x, &mut y, i);
    }
    Ok((x, y))
}

/// Smallest outlier loss minus largest clean loss at `theta`.
///
/// Returns `+inf` when either class is empty.
pub fn rho_gap(data: &Dataset, theta: &DVector<f64>) -> f64 {
    let losses = data.residual_losses(theta);
    let mut max_clean = f64::NEG_INFINITY;
    let mut min_outlier = f64::INFINITY;
    for (loss, label) in losses.iter().zip(&data.labels) {
        match label {
            Label::Clean => max_clean = max_clean.max(*loss),
            Label::Outlier => min_outlier = min_outlier.min(*loss),
        }
    }
    if max_clean == f64::NEG_INFINITY || min_outlier == f64::INFINITY {
        f64::INFINITY
    } else {
        min_outlier - max_clean
    }
}

/// Full dataset: clean and outlier rows, gap enforced, rows shuffled.
pub fn generate(spec: &GenSpec) -> Result<Dataset> {
    spec.validate()?;
    let gt = &spec.ground_truth;
    let (theta, _) = gen_theta_star(spec)?;
    let (xc, yc) = gen_clean(spec, &theta)?;
    let (mut xo, mut yo) = gen_outliers(spec)?;

    let max_clean = (&yc - &xc * &theta).iter().map(|r| r * r).fold(f64::NEG_INFINITY, f64::max);
    let violates = |xo: &DMatrix<f64>, yo: &DVector<f64>, i: usize| {
        let r = yo[i] - xo.row(i).transpose().dot(&theta);
        r * r - max_clean <= spec.min_rho
    };
    let mut rng = spec.rng(STREAM_RESAMPLE);
    let mut bad: Vec<usize> = (0..spec.n_outliers).filter(|&i| violates(&xo, &yo, i)).collect();
    let mut rounds = 0;
    while !bad.is_empty() {
        if rounds == spec.max_resamples {
            return Err(Error::ResampleExhausted { attempts: rounds, violating: bad.len() });
        }
        for &i in &bad {
            fill_outlier_row(&mut rng, spec, &mut xo, &mut yo, i);
        }
        bad.retain(|&i| violates(&xo, &yo, i));
        rounds += 1;
    }

    let n = spec.r + spec.n_outliers;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut spec.rng(STREAM_SHUFFLE));
    let mut x = DMatrix::zeros(n, gt.p);
    let mut y = DVector::zeros(n);
    let mut labels = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        if src < spec.r {
            x.row_mut(dst).copy_from(&xc.row(src));
            y[dst] = yc[src];
            labels.push(Label::Clean);
        } else {
            let o = src - spec.r;
            x.row_mut(dst).copy_from(&xo.row(o));
            y[dst] = yo[o];
            labels.push(Label::Outlier);
        }
    }

    let mut data = Dataset::new(x, y, labels)?.with_theta_star(theta.clone())?;
    data.rho = Some(rho_gap(&data, &theta));
    data.meta = Some(GenMeta {
        p: gt.p,
        k: gt.k,
        l1_budget: gt.l1_budget,
        sigma: gt.sigma,
        sigma_e: gt.sigma_e,
        seed: spec.seed,
    });
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{min_eigenvalue, sorted_eigenvalues};

    fn spec(p: usize, k: usize, r: usize, n_out: usize, seed: u64) -> GenSpec {
        GenSpec::new(GroundTruthConfig::new(p, k), r, n_out, seed)
    }

    #[test]
    fn theta_star_sparsity_and_range() {
        for seed in 0..20 {
            let (theta, scale) = gen_theta_star(&spec(50, 4, 10, 0, seed)).unwrap();
            assert_eq!(scale, 1.0);
            let nz: Vec<f64> = theta.iter().copied().filter(|v| *v != 0.0).collect();
            assert_eq!(nz.len(), 4);
            assert!(nz.iter().all(|v| (0.1..=1.1).contains(&v.abs())));
        }
        let (dense, _) = gen_theta_star(&spec(6, 6, 10, 0, 3)).unwrap();
        assert!(dense.iter().all(|v| *v != 0.0));
        assert_eq!(gen_theta_star(&spec(50, 4, 10, 0, 9)).unwrap(), gen_theta_star(&spec(50, 4, 10, 0, 9)).unwrap());
    }

    #[test]
    fn theta_star_respects_budget() {
        let mut s = spec(10, 5, 10, 0, 1);
        s.ground_truth.l1_budget = 0.5;
        let (theta, scale) = gen_theta_star(&s).unwrap();
        assert!(scale < 1.0);
        assert!((l1_norm(&theta) - 0.5).abs() < 1e-12);
        assert_eq!(theta.iter().filter(|v| **v != 0.0).count(), 5);
    }

    #[test]
    fn noiseless_clean_model() {
        let mut s = spec(5, 2, 30, 0, 2);
        s.ground_truth.sigma_e = 0.0;
        let (theta, _) = gen_theta_star(&s).unwrap();
        let (x, y) = gen_clean(&s, &theta).unwrap();
        assert!((y - x * theta).amax() == 0.0);
    }

    #[test]
    fn clean_covariance_concentrates() {
        let s = spec(5, 2, 10_000, 0, 4);
        let (theta, _) = gen_theta_star(&s).unwrap();
        let (x, _) = gen_clean(&s, &theta).unwrap();
        let cov = x.transpose() * &x / 10_000.0;
        let diff = cov - DMatrix::<f64>::identity(5, 5);
        let eig = sorted_eigenvalues(&diff);
        assert!(eig[0].abs().max(eig[4].abs()) < 0.1);
    }

    #[test]
    fn correlated_covariance_is_honoured() {
        let mut s = spec(3, 1, 20_000, 0, 5);
        let cov = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.0, 0.5, 1.0, 0.0, 0.0, 0.0, 2.0]);
        s.ground_truth.covariance = Some(cov.clone());
        let (theta, _) = gen_theta_star(&s).unwrap();
        let (x, _) = gen_clean(&s, &theta).unwrap();
        let emp = x.transpose() * &x / 20_000.0;
        assert!((emp - cov).amax() < 0.06);
    }

    #[test]
    fn rademacher_entries_are_signs() {
        let mut s = spec(4, 2, 50, 0, 6);
        s.predictors = PredictorDistribution::Rademacher;
        let (theta, _) = gen_theta_star(&s).unwrap();
        let (x, _) = gen_clean(&s, &theta).unwrap();
        assert!(x.iter().all(|v| v.abs() == 1.0));
    }

    #[test]
    fn support_covariance_min_eigenvalue() {
        // p = 50, r = 532 with identity covariance: Sigma_hat_SS >= 0.5 on most seeds
        let mut ok = 0;
        for seed in 0..100 {
            let s = spec(50, 4, 532, 0, seed);
            let (theta, _) = gen_theta_star(&s).unwrap();
            let (x, _) = gen_clean(&s, &theta).unwrap();
            let support: Vec<usize> = (0..50).filter(|&j| theta[j] != 0.0).collect();
            let xs = crate::linalg::select_columns(&x, &support);
            let cov = xs.transpose() * &xs / 532.0;
            if min_eigenvalue(&cov) >= 0.5 {
                ok += 1;
            }
        }
        assert!(ok >= 95, "only {ok}/100 seeds");
    }

    #[test]
    fn degenerate_outlier_ranges() {
        let mut s = spec(3, 1, 5, 4, 1);
        s.outlier_predictor_range = (0.0, 0.0);
        s.outlier_response_range = (5.0, 5.0);
        let (x, y) = gen_outliers(&s).unwrap();
        assert!(x.iter().all(|v| *v == 0.0));
        assert!(y.iter().all(|v| *v == 5.0));

        let (x, y) = gen_outliers(&spec(3, 1, 5, 0, 1)).unwrap();
        assert_eq!((x.nrows(), y.len()), (0, 0));

        let (x, y) = gen_outliers(&spec(7, 1, 5, 200, 1)).unwrap();
        assert!(x.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(y.iter().all(|v| (0.0..=5.0).contains(v)));
    }

    #[test]
    fn rho_gap_examples() {
        let x = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let y = DVector::from_vec(vec![1.0, 1.0 + 5f64.sqrt()]);
        let data = Dataset::new(x.clone(), y, vec![Label::Clean, Label::Outlier]).unwrap();
        let theta = DVector::from_vec(vec![1.0]);
        assert!((rho_gap(&data, &theta) - 5.0).abs() < 1e-12);

        let dup = Dataset::new(x, DVector::from_vec(vec![1.2, 1.2]), vec![Label::Clean, Label::Outlier]).unwrap();
        assert!(rho_gap(&dup, &theta) <= 0.0);

        let clean_only = Dataset::new(DMatrix::zeros(1, 1), DVector::zeros(1), vec![Label::Clean]).unwrap();
        assert_eq!(rho_gap(&clean_only, &theta), f64::INFINITY);
    }

    #[test]
    fn generate_enforces_gap_and_is_deterministic() {
        let p = 50;
        let r = default_clean_count(p);
        assert_eq!(r, 533);
        let s = spec(p, 4, r, r.div_ceil(2), 17);
        let a = generate(&s).unwrap();
        let b = generate(&s).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n(), 533 + 267);
        assert_eq!(a.r, 533);
        let rho = a.rho.unwrap();
        assert!(rho > 0.0);
        assert_eq!(rho, rho_gap(&a, a.theta_star.as_ref().unwrap()));
        // about a third of the rows are corrupted
        assert!((a.n_outliers() as f64 / a.n() as f64 - 1.0 / 3.0).abs() < 0.01);
        // the labels are not left in generation order
        assert!(a.labels[..r].contains(&Label::Outlier));
    }

    #[test]
    fn clean_only_generation() {
        let data = generate(&spec(5, 2, 20, 0, 3)).unwrap();
        assert!(data.labels.iter().all(|l| *l == Label::Clean));
        assert_eq!(data.rho, Some(f64::INFINITY));
    }

    #[test]
    fn clean_noise_level() {
        let data = generate(&spec(10, 3, 600, 0, 8)).unwrap();
        let res = &data.y - &data.x * data.theta_star.as_ref().unwrap();
        let sd = (res.norm_squared() / res.len() as f64).sqrt();
        assert!((sd - 0.1).abs() < 0.02, "noise sd {sd}");
    }

    #[test]
    fn forced_gap_and_exhaustion() {
        let mut s = spec(4, 2, 5, 3, 12);
        s.min_rho = 1.0;
        let data = generate(&s).unwrap();
        assert!(data.rho.unwrap() > 1.0);

        // no outlier can ever clear a huge gap inside [0, 1] x [0, 0.1]
        let mut s = spec(4, 2, 5, 3, 12);
        s.outlier_response_range = (0.0, 0.1);
        s.min_rho = 100.0;
        s.max_resamples = 5;
        assert!(matches!(generate(&s), Err(Error::ResampleExhausted { .. })));
    }

    #[test]
    fn sample_size_rules() {
        assert_eq!(selection_size(50, 1.5), (10f64.powf(1.5) * 50f64.ln().powi(2)).ceil() as usize);
        assert!(selection_size(50, 1.5) <= default_clean_count(50));
    }
}
