use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use invex_core::certify::{invexity_witness, nonconvexity_witness};
use invex_core::io::{read_json, write_json};
use invex_core::linalg::{min_eigenvalue, support_of};
use invex_core::metrics::DEFAULT_ZERO_TOL;
use invex_core::projections::{project_b, project_psd_corner, BFeasibleSet, DEFAULT_PSD_ITERS, DEFAULT_PSD_TOL};
use invex_core::{
    certify, default_clean_count, enumerate_best_subset, generate, read_dataset, run_sweep, selection_size,
    solve_invex, write_dataset, CertifyConfig, Dataset, Error, ExperimentConfig, GenSpec, GroundTruthConfig,
    OracleConfig, SolveResult, SolverConfig,
};

#[derive(Parser, Debug)]
#[command(name = "invex", version, about = "Outlier-robust sparse regression through an invex relaxation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset (CSV plus JSON sidecar)
    Gen(GenArgs),
    /// Solve the relaxation on a dataset and write the result as JSON
    Solve(SolveArgs),
    /// Build the dual certificate for a solve result
    Certify(CertifyArgs),
    /// Exhaustive best-subset search on a tiny dataset
    Oracle(OracleArgs),
    /// Run an experiment sweep from a JSON config
    Sweep(SweepArgs),
    /// Run quick randomized consistency checks
    Selftest(SelftestArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    p: usize,
    #[arg(long)]
    k: usize,
    /// Clean samples; defaults to ceil(1.1 * 10^1.5 * ln^2 p)
    #[arg(long)]
    r: Option<usize>,
    /// Outliers; defaults to ceil(r / 2)
    #[arg(long)]
    outliers: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    sigma_e: f64,
    /// L1 budget on theta*; defaults to 1.1 k
    #[arg(long = "l1-budget")]
    l1_budget: Option<f64>,
    /// Required margin between outlier and clean losses
    #[arg(long, default_value_t = 0.0)]
    min_rho: f64,
    /// Generation spec as JSON; replaces the flags above
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV path; the sidecar goes next to it
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct SizeArgs {
    /// Selection size
    #[arg(long, conflicts_with = "c")]
    m: Option<usize>,
    /// Selection size exponent, m = ceil(10^C ln^2 p)
    #[arg(long)]
    c: Option<f64>,
    /// Regularization; defaults to c_lambda * sqrt(m ln p)
    #[arg(long, conflicts_with = "c_lambda")]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    c_lambda: f64,
}

impl SizeArgs {
    fn resolve(&self, data: &Dataset) -> Result<(usize, f64), Error> {
        let p = data.p();
        let m = match (self.m, self.c) {
            (Some(m), _) => m,
            (None, Some(c)) => selection_size(p, c),
            (None, None) => data.r.min(data.n()),
        };
        let lambda = self.lambda.unwrap_or_else(|| self.c_lambda * (m as f64 * (p.max(2) as f64).ln()).sqrt());
        if m == 0 || m > data.n() {
            return Err(Error::InfeasibleM { m, n: data.n() });
        }
        Ok((m, lambda))
    }
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    size: SizeArgs,
    /// Solver settings as JSON; replaces the size flags
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CertifyArgs {
    #[arg(long)]
    data: PathBuf,
    /// Solve result JSON
    #[arg(long)]
    result: PathBuf,
    /// Certification settings as JSON
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    size: SizeArgs,
    /// Largest number of subsets to enumerate
    #[arg(long, default_value_t = invex_core::oracle::DEFAULT_SUBSET_CAP)]
    cap: u128,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides output_dir
    #[arg(long)]
    out: Option<PathBuf>,
    /// Runs a single seed instead of the configured list
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    trials: usize,
}

fn cmd_gen(a: GenArgs) -> Result<(), Error> {
    let spec = match &a.config {
        Some(path) => read_json::<GenSpec>(path)?,
        None => {
            let mut gt = GroundTruthConfig::new(a.p, a.k);
            gt.sigma_e = a.sigma_e;
            if let Some(b) = a.l1_budget {
                gt.l1_budget = b;
            }
            let r = a.r.unwrap_or_else(|| default_clean_count(a.p));
            let mut spec = GenSpec::new(gt, r, a.outliers.unwrap_or(r.div_ceil(2)), a.seed);
            spec.min_rho = a.min_rho;
            spec
        }
    };
    let data = generate(&spec)?;
    write_dataset(&data, &a.out)?;
    println!(
        "wrote {} ({} clean, {} outliers, p = {}, rho = {:.4})",
        a.out.display(),
        data.r,
        data.n_outliers(),
        data.p(),
        data.rho.unwrap_or(f64::NAN)
    );
    Ok(())
}

fn cmd_solve(a: SolveArgs) -> Result<(), Error> {
    let data = read_dataset(&a.data)?;
    let cfg = match &a.config {
        Some(path) => read_json::<SolverConfig>(path)?,
        None => {
            let (m, lambda) = a.size.resolve(&data)?;
            let mut cfg = SolverConfig::new(m, lambda);
            cfg.seed = a.seed;
            cfg
        }
    };
    let res = solve_invex(&data, &cfg)?;
    write_json(&res, &a.out)?;
    println!(
        "m = {}, lambda = {:.4}, outer = {}, converged = {}, objective = {:.6e}, rank1_gap = {:.2e}",
        cfg.m, cfg.lambda, res.outer_iters, res.converged, res.refit_objective, res.rank1_gap
    );
    let support = support_of(&res.theta(), DEFAULT_ZERO_TOL);
    println!("support = {support:?}");
    if data.n_outliers() > 0 {
        let wrong = res.b_rounded.iter().zip(&data.labels).filter(|(b, l)| **b && **l == invex_core::Label::Outlier);
        println!("selected outliers = {}", wrong.count());
    }
    Ok(())
}

fn cmd_certify(a: CertifyArgs) -> Result<(), Error> {
    let data = read_dataset(&a.data)?;
    let res: SolveResult = read_json(&a.result)?;
    let cfg = match &a.config {
        Some(path) => read_json::<CertifyConfig>(path)?,
        None => CertifyConfig::default(),
    };
    let support = support_of(&res.theta(), DEFAULT_ZERO_TOL);
    let report = certify(&data, &res.b_rounded, res.config.lambda, &support, &cfg)?;
    if let Some(out) = &a.out {
        write_json(&report, out)?;
    }
    let k = &report.kkt;
    println!("support = {:?}", report.certificate.support);
    println!("nu interval = [{:.6e}, {:.6e}]", report.certificate.nu_interval.0, report.certificate.nu_interval.1);
    println!("stationarity: b {:.3e}, vartheta {:.3e}", k.stationarity_b_max, k.stationarity_vartheta_norm);
    println!("complementary slackness {:.3e}, Lambda null residual {:.3e}", k.comp_slack_max, k.nullvec_residual);
    println!("Lambda eigenvalues: min {:.3e}, second {:.3e}", k.dual_feas_min_eig, k.second_eig);
    if let Some(s) = &report.strict {
        println!("off-support bound {:.4} (threshold {:.4}): {}", s.omega_bar_inf, s.threshold, pass(s.pass));
    }
    if let Some(s) = &report.assumptions {
        println!(
            "assumptions: min eig {:.4}, max eig {:.4}, incoherence {:.4}: {}",
            s.min_eig_ss,
            s.max_eig_ss,
            s.incoherence,
            pass(s.pass())
        );
    }
    println!("kkt feasible = {}", report.kkt_feasible(a.tol));
    Ok(())
}

fn cmd_oracle(a: OracleArgs) -> Result<(), Error> {
    let data = read_dataset(&a.data)?;
    let (m, lambda) = a.size.resolve(&data)?;
    let cfg = OracleConfig { cap: a.cap, ..OracleConfig::default() };
    let best = enumerate_best_subset(&data, m, lambda, None, &cfg)?;
    if let Some(out) = &a.out {
        write_json(&best, out)?;
    }
    println!("subsets = {}, objective = {:.6e}", best.subsets_evaluated, best.objective);
    println!("best subset = {:?}", best.j_star);
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<(), Error> {
    let mut cfg: ExperimentConfig = read_json(&a.config)?;
    if let Some(out) = a.out {
        cfg.output_dir = out;
    }
    if let Some(seed) = a.seed {
        cfg.seeds = vec![seed];
    }
    info!("c_lambda = {}", cfg.c_lambda);
    let results = run_sweep(&cfg)?;
    let failed = results.rows.iter().filter(|r| r.error.is_some()).count();
    for path in results.write(&cfg.output_dir)? {
        println!("wrote {}", path.display());
    }
    println!("{} rows, {failed} failed", results.rows.len());
    Ok(())
}

fn pass(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn cmd_selftest(a: SelftestArgs) -> Result<bool, Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut all = true;
    let mut report = |name: &str, ok: bool, detail: String| {
        println!("{} {name}: {detail}", pass(ok));
        all &= ok;
    };

    let mut worst = 0.0f64;
    for _ in 0..a.trials {
        let n = rng.random_range(2..12);
        let m = rng.random_range(1..=n);
        let set = BFeasibleSet::new(n, m)?;
        let v = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let b = project_b(&v, &set)?;
        let again = project_b(&b, &set)?;
        let viol = (m as f64 - b.sum()).max(0.0).max(b.iter().map(|x| (-x).max(x - 1.0).max(0.0)).fold(0.0, f64::max));
        worst = worst.max(viol).max((&again - &b).amax());
    }
    report("b projection feasible and idempotent", worst <= 1e-9, format!("worst {worst:.2e}"));

    let mut worst = 0.0f64;
    for _ in 0..a.trials {
        let d = rng.random_range(2..8);
        let g = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        let sym = (&g + g.transpose()) * 0.5;
        let v = project_psd_corner(&sym, DEFAULT_PSD_ITERS, DEFAULT_PSD_TOL)?;
        let corner = (v.corner() - 1.0).abs();
        worst = worst.max(corner).max((-min_eigenvalue(&v.v)).max(0.0));
    }
    report("psd corner projection feasible", worst <= 1e-8, format!("worst {worst:.2e}"));

    let mut spec = GenSpec::new(GroundTruthConfig::new(5, 2), 30, 10, a.seed);
    spec.min_rho = 0.5;
    let data = generate(&spec)?;
    let m = 25;
    let lambda = (m as f64 * 5f64.ln()).sqrt();
    let w = invexity_witness(&data, m, lambda, a.trials, a.seed)?;
    report(
        "invexity gap nonnegative",
        w.min_gap >= -1e-8 && w.bilinear_max_abs <= 1e-9,
        format!("min gap {:.3e}, bilinear {:.2e}", w.min_gap, w.bilinear_max_abs),
    );

    let nc = nonconvexity_witness(&data)?;
    report(
        "nonconvex along a segment",
        nc.g_pos > 0.0 && nc.g_neg < 0.0,
        format!("g+ {:.3e}, g- {:.3e}", nc.g_pos, nc.g_neg),
    );

    let cfg = SolverConfig::new(m, 0.05 * lambda);
    let first = solve_invex(&data, &cfg)?;
    let second = solve_invex(&data, &cfg)?;
    let monotone = first.objective_trace.windows(2).all(|w| w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0));
    report("solver deterministic", first == second, format!("{} outer rounds", first.outer_iters));
    report("objective trace nonincreasing", monotone, format!("{} entries", first.objective_trace.len()));

    let support = support_of(&first.theta(), DEFAULT_ZERO_TOL);
    match certify(&data, &first.b_rounded, cfg.lambda, &support, &CertifyConfig::default()) {
        Ok(r) => report(
            "dual construction cancels stationarity",
            r.kkt.stationarity_vartheta_norm <= 1e-9 && r.kkt.nullvec_residual <= 1e-8,
            format!("{:.2e}, null residual {:.2e}", r.kkt.stationarity_vartheta_norm, r.kkt.nullvec_residual),
        ),
        Err(e) => report("dual construction cancels stationarity", false, e.to_string()),
    }
    Ok(all)
}

fn run(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::Gen(a) => cmd_gen(a).map(|_| true),
        Command::Solve(a) => cmd_solve(a).map(|_| true),
        Command::Certify(a) => cmd_certify(a).map(|_| true),
        Command::Oracle(a) => cmd_oracle(a).map(|_| true),
        Command::Sweep(a) => cmd_sweep(a).map(|_| true),
        Command::Selftest(a) => cmd_selftest(a),
    }
}

fn ensure_parent(path: &Path) {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        let _ = std::fs::create_dir_all(dir);
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match &cli.command {
        Command::Gen(a) => ensure_parent(&a.out),
        Command::Solve(a) => ensure_parent(&a.out),
        Command::Certify(CertifyArgs { out: Some(o), .. }) | Command::Oracle(OracleArgs { out: Some(o), .. }) => {
            ensure_parent(o)
        }
        _ => {}
    }
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: self-test failed");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
