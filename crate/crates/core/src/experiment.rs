//! Monte Carlo sweeps over the selection size or the outlier proportion.
//!
//! Every `(cell, seed)` trial generates one dataset and runs each configured
//! method on it. Trials run in parallel; rows are collected in `(cell, seed,
//! method)` order so the CSV output does not depend on scheduling.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{run_baseline, BaselineConfig, BaselineMethod};
use crate::certify::{certify, CertifyConfig};
use crate::datagen::{default_clean_count, generate, selection_size, GenSpec};
use crate::error::{Error, Result};
use crate::io::write_json;
use crate::linalg::{min_eigenvalue, submatrix, support_of};
use crate::metrics::{clean_recovery_mistakes, norm_error, support_jaccard, theory_delta_m, DEFAULT_ZERO_TOL};
use crate::model::{Dataset, GroundTruthConfig};
use crate::plot::{LinePlot, Series};
use crate::solver::{solve_invex, SolverConfig};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "INVEX_THREADS";
/// Tolerance passed to `CertificationReport::kkt_feasible`.
pub const KKT_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Invex,
    Lasso,
    Adahuber,
    Trimmed,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Invex => "invex",
            Method::Lasso => "lasso",
            Method::Adahuber => BaselineMethod::AdaptiveHuber.label(),
            Method::Trimmed => BaselineMethod::Trimmed.label(),
        }
    }
}

/// Number of clean samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CleanCountRule {
    /// `ceil(1.1 * 10^1.5 * ln^2 p)`.
    Default,
    Explicit(usize),
}

/// Number of outliers added to the clean samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutlierRule {
    /// `ceil(r / 2)`.
    HalfClean,
    /// Fractions of the total sample count; each entry is one cell.
    Proportions(Vec<f64>),
}

impl OutlierRule {
    /// Outlier count giving fraction `q` of `r + n_outliers` samples.
    pub fn count_for(q: f64, r: usize) -> usize {
        (q * r as f64 / (1.0 - q)).round() as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub p: usize,
    pub k: usize,
    #[serde(default = "default_clean_rule")]
    pub clean_count_rule: CleanCountRule,
    #[serde(default = "default_outlier_rule")]
    pub outlier_rule: OutlierRule,
    /// Exponents `C` of the selection size `ceil(10^C ln^2 p)`.
    pub m_rule: Vec<f64>,
    /// `lambda = c_lambda * sqrt(n_fit * ln p)` where `n_fit` is the number of rows a method fits.
    pub c_lambda: f64,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub sigma_e: Option<f64>,
    #[serde(default)]
    pub l1_budget: Option<f64>,
    #[serde(default)]
    pub min_rho: f64,
    /// Adds wall-clock times to the CSV, which makes the output vary between runs.
    #[serde(default)]
    pub record_timing: bool,
    #[serde(default)]
    pub solver: Option<SolverOverrides>,
}

/// Optional solver knobs applied on top of `SolverConfig::new`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverOverrides {
    pub max_outer: Option<usize>,
    pub tol_obj: Option<f64>,
    pub admm_iters: Option<usize>,
}

fn default_clean_rule() -> CleanCountRule {
    CleanCountRule::Default
}

fn default_outlier_rule() -> OutlierRule {
    OutlierRule::HalfClean
}

/// One `(m, n_outliers)` combination.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub c: f64,
    pub m: usize,
    pub r: usize,
    pub n_outliers: usize,
    pub proportion: f64,
}

impl ExperimentConfig {
    pub fn clean_count(&self) -> usize {
        match self.clean_count_rule {
            CleanCountRule::Default => default_clean_count(self.p),
            CleanCountRule::Explicit(r) => r,
        }
    }

    pub fn ground_truth(&self) -> GroundTruthConfig {
        let mut gt = GroundTruthConfig::new(self.p, self.k);
        if let Some(s) = self.sigma_e {
            gt.sigma_e = s;
        }
        if let Some(b) = self.l1_budget {
            gt.l1_budget = b;
        }
        gt
    }

    pub fn validate(&self) -> Result<()> {
        self.ground_truth().validate()?;
        if self.p < 2 {
            return Err(Error::InvalidConfig("p must be at least 2".into()));
        }
        if self.seeds.is_empty() || self.methods.is_empty() || self.m_rule.is_empty() {
            return Err(Error::InvalidConfig("seeds, methods and m_rule must be nonempty".into()));
        }
        if !(self.c_lambda >= 0.0) || !self.c_lambda.is_finite() {
            return Err(Error::InvalidConfig("c_lambda must be finite and >= 0".into()));
        }
        if self.clean_count() == 0 {
            return Err(Error::InvalidConfig("clean count must be at least 1".into()));
        }
        if let OutlierRule::Proportions(qs) = &self.outlier_rule {
            if qs.is_empty() || qs.iter().any(|q| !(0.0..1.0).contains(q)) {
                return Err(Error::InvalidConfig("outlier proportions must lie in [0, 1)".into()));
            }
        }
        for cell in self.cells() {
            if cell.m == 0 || cell.m > cell.r + cell.n_outliers {
                return Err(Error::InfeasibleM { m: cell.m, n: cell.r + cell.n_outliers });
            }
        }
        Ok(())
    }

    /// Cells in output order: outlier setting outermost, then `C`.
    pub fn cells(&self) -> Vec<Cell> {
        let r = self.clean_count();
        let outliers: Vec<(usize, f64)> = match &self.outlier_rule {
            OutlierRule::HalfClean => {
                let o = r.div_ceil(2);
                vec![(o, o as f64 / (r + o) as f64)]
            }
            OutlierRule::Proportions(qs) => qs.iter().map(|&q| (OutlierRule::count_for(q, r), q)).collect(),
        };
        outliers
            .into_iter()
            .flat_map(|(n_outliers, proportion)| {
                self.m_rule.iter().map(move |&c| Cell { c, m: selection_size(self.p, c), r, n_outliers, proportion })
            })
            .collect()
    }

    pub fn lambda(&self, n_fit: usize) -> f64 {
        self.c_lambda * (n_fit as f64 * (self.p as f64).ln()).sqrt()
    }

    fn solver_config(&self, m: usize) -> SolverConfig {
        let mut cfg = SolverConfig::new(m, self.lambda(m));
        if let Some(o) = &self.solver {
            if let Some(v) = o.max_outer {
                cfg.max_outer = v;
            }
            if let Some(v) = o.tol_obj {
                cfg.tol_obj = v;
            }
            if let Some(v) = o.admm_iters {
                cfg.admm_iters = v;
            }
        }
        cfg
    }
}

/// One CSV row. Empty fields mean "not applicable to this method" or "failed".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub p: usize,
    pub k: usize,
    pub m: usize,
    pub r: usize,
    pub n_outliers: usize,
    pub seed: u64,
    pub mistakes_frac: Option<f64>,
    pub jaccard: Option<f64>,
    pub norm_error: Option<f64>,
    pub delta_m: Option<f64>,
    pub rank1_gap: Option<f64>,
    pub kkt_feasible: Option<bool>,
    pub wall_ms: Option<f64>,
    pub error: Option<String>,
}

impl ResultRow {
    fn empty(method: Method, cfg: &ExperimentConfig, cell: &Cell, seed: u64) -> Self {
        Self {
            method: method.label().into(),
            p: cfg.p,
            k: cfg.k,
            m: cell.m,
            r: cell.r,
            n_outliers: cell.n_outliers,
            seed,
            mistakes_frac: None,
            jaccard: None,
            norm_error: None,
            delta_m: None,
            rank1_gap: None,
            kkt_feasible: None,
            wall_ms: None,
            error: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResults {
    pub config: ExperimentConfig,
    pub cells: Vec<Cell>,
    pub rows: Vec<ResultRow>,
}

fn error_tag(e: &Error) -> String {
    let tag = match e {
        Error::DimensionMismatch(_) => "dimension_mismatch",
        Error::NonFinite(_) => "non_finite",
        Error::Degenerate(_) => "degenerate",
        Error::InvalidConfig(_) => "invalid_config",
        Error::InfeasibleM { .. } => "infeasible_m",
        Error::ResampleExhausted { .. } => "resample_exhausted",
        Error::CombinatorialBlowup { .. } => "combinatorial_blowup",
        Error::EmptySupport { .. } => "empty_support",
        Error::SingularSubmatrix { .. } => "singular_submatrix",
        Error::RejectionExhausted { .. } => "rejection_exhausted",
        Error::AllZeroColumn => "all_zero_column",
        Error::Io(_) | Error::Csv(_) | Error::Json(_) => "io",
    };
    format!("{tag}: {e}")
}

fn fill_estimate(row: &mut ResultRow, data: &Dataset, theta: &DVector<f64>) -> Result<()> {
    let star = data.theta_star.as_ref().ok_or_else(|| Error::InvalidConfig("dataset lacks theta_star".into()))?;
    row.jaccard = Some(support_jaccard(theta, star, DEFAULT_ZERO_TOL)?);
    row.norm_error = Some(norm_error(theta, star)?);
    Ok(())
}

fn run_invex(cfg: &ExperimentConfig, cell: &Cell, data: &Dataset, row: &mut ResultRow) -> Result<()> {
    let scfg = cfg.solver_config(cell.m);
    let res = solve_invex(data, &scfg)?;
    let theta = res.theta();
    fill_estimate(row, data, &theta)?;
    row.mistakes_frac = Some(clean_recovery_mistakes(&res.b_rounded, &data.labels, cell.m)?);
    row.rank1_gap = Some(res.rank1_gap);

    let gt = cfg.ground_truth();
    let star_support = support_of(data.theta_star.as_ref().expect("checked above"), 0.0);
    let alpha1 = min_eigenvalue(&submatrix(&gt.covariance_matrix(), &star_support, &star_support));
    row.delta_m = Some(theory_delta_m(gt.l1_budget, scfg.lambda, cfg.k, alpha1, cell.m));

    let support = support_of(&theta, DEFAULT_ZERO_TOL);
    let ccfg = CertifyConfig::default().with_population_covariance(&gt.covariance_matrix(), &support);
    row.kkt_feasible = match certify(data, &res.b_rounded, scfg.lambda, &support, &ccfg) {
        Ok(report) => Some(report.kkt_feasible(KKT_TOL)),
        Err(e @ (Error::EmptySupport { .. } | Error::SingularSubmatrix { .. })) => {
            warn!("certificate unavailable (m = {}, seed = {}): {e}", cell.m, row.seed);
            Some(false)
        }
        Err(e) => return Err(e),
    };
    Ok(())
}

fn run_baseline_method(method: Method, cfg: &ExperimentConfig, data: &Dataset, row: &mut ResultRow) -> Result<()> {
    let (bm, trim) = match method {
        Method::Lasso => (BaselineMethod::Lasso, 0),
        Method::Adahuber => (BaselineMethod::AdaptiveHuber, 0),
        Method::Trimmed => (BaselineMethod::Trimmed, data.n_outliers()),
        Method::Invex => unreachable!("handled separately"),
    };
    let mut bcfg = BaselineConfig::new(bm, cfg.lambda(data.n() - trim));
    bcfg.trim_count = trim;
    let theta = run_baseline(data, &bcfg)?;
    fill_estimate(row, data, &theta)
}

fn run_trial(cfg: &ExperimentConfig, cell: &Cell, seed: u64) -> Vec<ResultRow> {
    let mut spec = GenSpec::new(cfg.ground_truth(), cell.r, cell.n_outliers, seed);
    spec.min_rho = cfg.min_rho;
    let data = generate(&spec);
    cfg.methods
        .iter()
        .map(|&method| {
            let mut row = ResultRow::empty(method, cfg, cell, seed);
            let start = Instant::now();
            let outcome = match &data {
                Ok(d) if method == Method::Invex => run_invex(cfg, cell, d, &mut row),
                Ok(d) => run_baseline_method(method, cfg, d, &mut row),
                Err(e) => Err(Error::Degenerate(format!("data generation failed: {e}"))),
            };
            if cfg.record_timing {
                row.wall_ms = Some(start.elapsed().as_secs_f64() * 1e3);
            }
            if let Err(e) = outcome {
                warn!("{} failed at m = {}, seed = {seed}: {e}", method.label(), cell.m);
                let keep = ResultRow {
                    error: Some(error_tag(&e)),
                    wall_ms: row.wall_ms,
                    ..ResultRow::empty(method, cfg, cell, seed)
                };
                row = keep;
            }
            row
        })
        .collect()
}

fn worker_count() -> Option<usize> {
    std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()).filter(|&n| n > 0)
}

/// Runs every trial; failures are recorded in the rows, never propagated.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepResults> {
    cfg.validate()?;
    let cells = cfg.cells();
    let trials: Vec<(usize, u64)> = (0..cells.len()).flat_map(|c| cfg.seeds.iter().map(move |&s| (c, s))).collect();
    info!("sweep: {} cells x {} seeds x {} methods", cells.len(), cfg.seeds.len(), cfg.methods.len());
    let run = || -> Vec<Vec<ResultRow>> { trials.par_iter().map(|&(c, s)| run_trial(cfg, &cells[c], s)).collect() };
    let nested = match worker_count() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    };
    Ok(SweepResults { config: cfg.clone(), cells, rows: nested.into_iter().flatten().collect() })
}

/// Mean and sample standard deviation over the successful seeds of one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub p: usize,
    pub k: usize,
    pub m: usize,
    pub r: usize,
    pub n_outliers: usize,
    pub proportion: f64,
    pub trials: usize,
    pub failed: usize,
    pub mistakes_mean: Option<f64>,
    pub mistakes_std: Option<f64>,
    pub jaccard_mean: Option<f64>,
    pub jaccard_std: Option<f64>,
    pub norm_error_mean: Option<f64>,
    pub norm_error_std: Option<f64>,
    pub delta_m_mean: Option<f64>,
    pub kkt_feasible_rate: Option<f64>,
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (Some(mean), Some(std))
}

impl SweepResults {
    /// One row per `(cell, method)` in cell order.
    pub fn aggregate(&self) -> Vec<AggregateRow> {
        let mut out = Vec::new();
        for cell in &self.cells {
            for method in &self.config.methods {
                let rows: Vec<&ResultRow> = self
                    .rows
                    .iter()
                    .filter(|r| r.method == method.label() && r.m == cell.m && r.n_outliers == cell.n_outliers)
                    .collect();
                let ok: Vec<&&ResultRow> = rows.iter().filter(|r| r.error.is_none()).collect();
                let col = |f: fn(&ResultRow) -> Option<f64>| ok.iter().filter_map(|r| f(r)).collect::<Vec<f64>>();
                let (mistakes_mean, mistakes_std) = mean_std(&col(|r| r.mistakes_frac));
                let (jaccard_mean, jaccard_std) = mean_std(&col(|r| r.jaccard));
                let (norm_error_mean, norm_error_std) = mean_std(&col(|r| r.norm_error));
                let kkt = col(|r| r.kkt_feasible.map(|b| b as u8 as f64));
                out.push(AggregateRow {
                    method: method.label().into(),
                    p: self.config.p,
                    k: self.config.k,
                    m: cell.m,
                    r: cell.r,
                    n_outliers: cell.n_outliers,
                    proportion: cell.proportion,
                    trials: rows.len(),
                    failed: rows.len() - ok.len(),
                    mistakes_mean,
                    mistakes_std,
                    jaccard_mean,
                    jaccard_std,
                    norm_error_mean,
                    norm_error_std,
                    delta_m_mean: mean_std(&col(|r| r.delta_m)).0,
                    kkt_feasible_rate: mean_std(&kkt).0,
                });
            }
        }
        out
    }

    /// Whether the x axis of the plots is the outlier proportion rather than `m`.
    fn proportion_axis(&self) -> bool {
        matches!(&self.config.outlier_rule, OutlierRule::Proportions(q) if q.len() > 1) && self.config.m_rule.len() == 1
    }

    /// Mistakes, support recovery and norm error panels.
    pub fn plots(&self) -> [(String, LinePlot); 3] {
        let agg = self.aggregate();
        let by_prop = self.proportion_axis();
        let x_label = if by_prop { "outlier proportion" } else { "m" };
        let panel = |file: &str, title: &str, y: &str, pick: fn(&AggregateRow) -> (Option<f64>, Option<f64>)| {
            let mut groups: BTreeMap<(usize, String), Series> = BTreeMap::new();
            for (order, method) in self.config.methods.iter().enumerate() {
                let rows = agg.iter().filter(|a| a.method == method.label());
                for a in rows {
                    let (mean, std) = pick(a);
                    let Some(mean) = mean else { continue };
                    let (x, name) = if by_prop {
                        (a.proportion, method.label().to_string())
                    } else if self.cells.iter().filter(|c| c.m == a.m).count() > 1 {
                        (a.m as f64, format!("{} q={:.2}", method.label(), a.proportion))
                    } else {
                        (a.m as f64, method.label().to_string())
                    };
                    let s = groups.entry((order, name.clone())).or_insert_with(|| Series {
                        name,
                        points: Vec::new(),
                        err: Some(Vec::new()),
                    });
                    s.points.push((x, mean));
                    s.err.as_mut().expect("always set").push(std.unwrap_or(0.0));
                }
            }
            let plot = LinePlot {
                title: format!("{title} (p = {}, k = {})", self.config.p, self.config.k),
                x_label: x_label.into(),
                y_label: y.into(),
                series: groups.into_values().collect(),
            };
            (file.to_string(), plot)
        };
        [
            panel("mistakes.svg", "Mistakes in clean sample recovery", "fraction of m", |a| {
                (a.mistakes_mean, a.mistakes_std)
            }),
            panel("support.svg", "Support recovery", "Jaccard index", |a| (a.jaccard_mean, a.jaccard_std)),
            panel("norm_error.svg", "Norm error", "||theta_hat - theta*||", |a| (a.norm_error_mean, a.norm_error_std)),
        ]
    }

    /// Writes `results.csv`, `aggregate.csv`, `config.json` and the three SVG panels.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let results = dir.join("results.csv");
        let mut w = csv::Writer::from_path(&results)?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        written.push(results);

        let aggregate = dir.join("aggregate.csv");
        let mut w = csv::Writer::from_path(&aggregate)?;
        for row in self.aggregate() {
            w.serialize(row)?;
        }
        w.flush()?;
        written.push(aggregate);

        let config = dir.join("config.json");
        write_json(&self.config, &config)?;
        written.push(config);

        for (file, plot) in self.plots() {
            let path = dir.join(file);
            std::fs::write(&path, plot.to_svg())?;
            written.push(path);
        }
        Ok(written)
    }
}
