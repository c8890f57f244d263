//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use invex_core::certify::{assumption_check, certify, invexity_witness, nonconvexity_witness, CertifyConfig};
use invex_core::datagen::{default_clean_count, generate, GenSpec};
use invex_core::experiment::{run_sweep, CleanCountRule, ExperimentConfig, Method, OutlierRule, SweepResults};
use invex_core::linalg::{min_eigenvalue, support_of};
use invex_core::model::{lift_parameter, lift_sample, squared_loss, Dataset, GroundTruthConfig, Label};
use invex_core::oracle::{enumerate_best_subset, OracleConfig};
use invex_core::projections::{project_b, project_psd_corner, BFeasibleSet, DEFAULT_PSD_ITERS, DEFAULT_PSD_TOL};
use invex_core::solver::{solve_invex, SolverConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

fn ac1_lifting() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for &p in &[1usize, 5, 50] {
        for _ in 0..1000 {
            let x = uniform_vec(&mut rng, p, 2.0);
            let theta = uniform_vec(&mut rng, p, 2.0);
            let y: f64 = rng.random_range(-5.0..5.0);
            let f = squared_loss(&x, y, &theta).unwrap();
            let a = lift_sample(&x, y).unwrap().a;
            let v = lift_parameter(&theta).unwrap().v;
            let lifted = a.component_mul(&v).sum();
            worst = worst.max((lifted - f).abs() / f.max(1.0));
        }
    }
    outcome(worst <= 1e-10, format!("worst relative error {worst:.2e}"))
}

fn tiny_instance(seed: u64) -> Dataset {
    let mut spec = GenSpec::new(GroundTruthConfig::new(4, 2), 5, 3, seed);
    spec.min_rho = 1.0;
    generate(&spec).unwrap()
}

const TINY_M: usize = 4;

fn tiny_lambda() -> f64 {
    (TINY_M as f64 * 4f64.ln()).sqrt()
}

fn ac2_invexity() -> Outcome {
    let data = tiny_instance(0);
    let w = invexity_witness(&data, TINY_M, tiny_lambda(), 1000, 7).unwrap();
    outcome(
        w.bilinear_max_abs <= 1e-9 && w.min_gap >= -1e-9,
        format!("{} pairs, bilinear {:.2e}, min gap {:.3e}", w.trials, w.bilinear_max_abs, w.min_gap),
    )
}

fn ac3_nonconvexity() -> Outcome {
    let mut spec = GenSpec::new(GroundTruthConfig::new(10, 3), 60, 20, 3);
    spec.min_rho = 0.5;
    let data = generate(&spec).unwrap();
    let w = nonconvexity_witness(&data).unwrap();
    outcome(w.g_pos > 1e-6 && w.g_neg < -1e-6, format!("G+ = {:.4e}, G- = {:.4e}", w.g_pos, w.g_neg))
}

/// Projection onto `{b in [0,1]^n, sum b >= m}` by enumerating which bounds are active.
fn project_b_oracle(v: &DVector<f64>, m: usize) -> DVector<f64> {
    let n = v.len();
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut consider = |b: DVector<f64>| {
        let feasible = b.iter().all(|x| (-1e-12..=1.0 + 1e-12).contains(x)) && b.sum() >= m as f64 - 1e-10;
        if feasible {
            let d = (&b - v).norm_squared();
            if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                best = Some((d, b));
            }
        }
    };
    for code in 0..3usize.pow(n as u32) {
        // 0: at lower bound, 1: at upper bound, 2: free
        let state: Vec<usize> = (0..n).map(|i| code / 3usize.pow(i as u32) % 3).collect();
        let fixed: f64 = state.iter().filter(|&&s| s == 1).count() as f64;
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 2).collect();
        let base = DVector::from_fn(n, |i, _| match state[i] {
            0 => 0.0,
            1 => 1.0,
            _ => v[i],
        });
        consider(base.clone());
        if !free.is_empty() {
            let mu = (m as f64 - fixed - free.iter().map(|&i| v[i]).sum::<f64>()) / free.len() as f64;
            if mu >= 0.0 {
                let mut b = base;
                for &i in &free {
                    b[i] = v[i] + mu;
                }
                consider(b);
            }
        }
    }
    best.expect("the all-ones vector is always a candidate").1
}

fn ac4_projections() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut b_err = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(1..=6);
        let m = rng.random_range(0..=n);
        let v = uniform_vec(&mut rng, n, 1.5);
        let b = project_b(&v, &BFeasibleSet::new(n, m).unwrap()).unwrap();
        b_err = b_err.max((&b - project_b_oracle(&v, m)).amax());
    }
    let (mut min_eig, mut corner_err, mut idem) = (f64::INFINITY, 0.0f64, 0.0f64);
    for _ in 0..200 {
        let p = rng.random_range(1..=20);
        let g = DMatrix::from_fn(p + 1, p + 1, |_, _| rng.random_range(-2.0..2.0));
        let sym = (&g + g.transpose()) * 0.5;
        let once = project_psd_corner(&sym, DEFAULT_PSD_ITERS, DEFAULT_PSD_TOL).unwrap();
        let twice = project_psd_corner(&once.v, DEFAULT_PSD_ITERS, DEFAULT_PSD_TOL).unwrap();
        min_eig = min_eig.min(min_eigenvalue(&once.v));
        corner_err = corner_err.max((once.v[(p, p)] - 1.0).abs());
        idem = idem.max((&twice.v - &once.v).amax());
    }
    outcome(
        b_err <= 1e-8 && min_eig >= -1e-9 && corner_err == 0.0 && idem <= 2e-9,
        format!("b vs oracle {b_err:.2e}; psd min eig {min_eig:.2e}, corner {corner_err:.1e}, idempotence {idem:.2e}"),
    )
}

fn ac5_oracle() -> Outcome {
    let lambda = tiny_lambda();
    let (mut same, mut worst_gap) = (0, 0.0f64);
    for seed in 0..10 {
        let data = tiny_instance(seed);
        let res = solve_invex(&data, &SolverConfig::new(TINY_M, lambda)).unwrap();
        let best = enumerate_best_subset(&data, TINY_M, lambda, None, &OracleConfig::default()).unwrap();
        if res.b_rounded == best.selection(data.n()) {
            same += 1;
        }
        let gap = (res.refit_objective - best.objective).abs() / best.objective.abs().max(1.0);
        worst_gap = worst_gap.max(gap);
    }
    outcome(
        same >= 9 && worst_gap <= 1e-4,
        format!("same subset on {same}/10 seeds, worst relative gap {worst_gap:.2e}"),
    )
}

struct KktCase {
    identities: bool,
    rest: bool,
}

fn kkt_case(data: &Dataset, m: usize, lambda: f64) -> KktCase {
    let res = solve_invex(data, &SolverConfig::new(m, lambda)).unwrap();
    let support = support_of(data.theta_star.as_ref().unwrap(), 0.0);
    let cfg = CertifyConfig::default().with_population_covariance(&DMatrix::identity(data.p(), data.p()), &support);
    let rep = certify(data, &res.b_rounded, lambda, &support, &cfg).unwrap();
    let k = &rep.kkt;
    let (lo, hi) = rep.certificate.nu_interval;
    KktCase {
        identities: k.stationarity_vartheta_norm <= 1e-10 && k.comp_slack_max <= 1e-10,
        rest: k.nullvec_residual <= 1e-6
            && k.second_eig > 0.0
            && lo <= hi
            && rep.strict.as_ref().is_some_and(|s| s.omega_bar_inf <= 1.0 - 0.5 / 4.0),
    }
}

fn ac6_kkt() -> Outcome {
    let mut cases = Vec::new();
    for seed in 0..10 {
        cases.push(kkt_case(&tiny_instance(seed), TINY_M, tiny_lambda()));
    }
    let r = default_clean_count(20);
    let m = 250;
    for seed in 0..5 {
        let mut spec = GenSpec::new(GroundTruthConfig::new(20, 3), r, r / 2, seed);
        spec.min_rho = 1.0;
        let data = generate(&spec).unwrap();
        cases.push(kkt_case(&data, m, (m as f64 * 20f64.ln()).sqrt()));
    }
    let identities = cases.iter().filter(|c| c.identities).count();
    let rest = cases.iter().filter(|c| c.rest).count();
    let frac = rest as f64 / cases.len() as f64;
    outcome(
        identities == cases.len() && frac >= 0.8,
        format!("identities on {identities}/{n}, eigen/nu/off-support conditions on {rest}/{n}", n = cases.len()),
    )
}

fn means(res: &SweepResults, method: &str) -> Vec<(f64, f64, f64)> {
    res.aggregate()
        .into_iter()
        .filter(|a| a.method == method)
        .map(|a| {
            (
                a.mistakes_mean.unwrap_or(f64::NAN),
                a.jaccard_mean.unwrap_or(f64::NAN),
                a.norm_error_mean.unwrap_or(f64::NAN),
            )
        })
        .collect()
}

/// Number of steps going against the expected direction.
fn wrong_steps(values: &[f64], increasing: bool) -> usize {
    values.windows(2).filter(|w| if increasing { w[1] < w[0] } else { w[1] > w[0] }).count()
}

fn sweep_config(p: usize, outlier_rule: OutlierRule, m_rule: Vec<f64>) -> ExperimentConfig {
    ExperimentConfig {
        p,
        k: 4,
        clean_count_rule: CleanCountRule::Default,
        outlier_rule,
        m_rule,
        c_lambda: 0.05,
        methods: vec![Method::Invex, Method::Lasso],
        seeds: (0..5).collect(),
        output_dir: std::env::temp_dir(),
        sigma_e: None,
        l1_budget: None,
        min_rho: 0.0,
        record_timing: false,
        solver: None,
    }
}

fn ac7_m_sweep() -> Outcome {
    let cfg = sweep_config(50, OutlierRule::HalfClean, vec![1.0, 1.1, 1.2, 1.3, 1.4, 1.5]);
    let res = run_sweep(&cfg).unwrap();
    let invex = means(&res, "invex");
    let lasso = means(&res, "lasso");
    let last = invex.last().unwrap();
    let lasso_last = lasso.last().unwrap();
    let mistakes: Vec<f64> = invex.iter().map(|v| v.0).collect();
    let jaccard: Vec<f64> = invex.iter().map(|v| v.1).collect();
    let error: Vec<f64> = invex.iter().map(|v| v.2).collect();
    let steps = [wrong_steps(&mistakes, false), wrong_steps(&jaccard, true), wrong_steps(&error, false)];
    outcome(
        last.0 <= 0.05 && last.1 >= 0.95 && last.2 < lasso_last.2 && steps.iter().all(|&s| s <= 1),
        format!(
            "r = {}, largest m: mistakes {:.3}, jaccard {:.3}, error {:.4} vs lasso {:.4}; wrong-direction steps {steps:?}",
            cfg.clean_count(),
            last.0,
            last.1,
            last.2,
            lasso_last.2
        ),
    )
}

fn ac8_proportion_sweep() -> Outcome {
    let props = vec![0.05, 0.15, 0.3, 0.45];
    let cfg = sweep_config(30, OutlierRule::Proportions(props.clone()), vec![1.5]);
    let res = run_sweep(&cfg).unwrap();
    let invex = means(&res, "invex");
    let lasso = means(&res, "lasso");
    let mut ok = true;
    let mut detail = Vec::new();
    for (i, q) in props.iter().enumerate() {
        ok &= invex[i].1 >= lasso[i].1;
        if *q >= 0.3 {
            ok &= invex[i].2 <= lasso[i].2;
        }
        detail.push(format!("q={q}: J {:.2}/{:.2}, err {:.3}/{:.3}", invex[i].1, lasso[i].1, invex[i].2, lasso[i].2));
    }
    outcome(ok, format!("invex/lasso {}", detail.join("; ")))
}

fn ac9_assumptions() -> Outcome {
    let (p, m) = (50, 500);
    let mut passing = 0;
    for seed in 0..100 {
        let r = default_clean_count(p);
        let data = generate(&GenSpec::new(GroundTruthConfig::new(p, 4), r, r / 2, seed)).unwrap();
        let mut left = m;
        let selection: Vec<bool> = data
            .labels
            .iter()
            .map(|l| {
                let take = *l == Label::Clean && left > 0;
                left -= take as usize;
                take
            })
            .collect();
        let support = support_of(data.theta_star.as_ref().unwrap(), 0.0);
        let rep = assumption_check(&data, &support, Some(&selection), &CertifyConfig::default()).unwrap();
        if rep.min_eig_ss >= 0.5 && rep.incoherence <= 0.75 {
            passing += 1;
        }
    }
    outcome(passing >= 95, format!("{passing}/100 seeds satisfy both bounds"))
}

fn invex(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_invex")).args(args).output().expect("binary runs");
    assert!(out.status.success(), "invex {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn ac10_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = sweep_config(10, OutlierRule::HalfClean, vec![1.0, 1.2]);
    cfg.clean_count_rule = CleanCountRule::Explicit(120);
    cfg.methods = vec![Method::Invex, Method::Lasso, Method::Adahuber, Method::Trimmed];
    cfg.seeds = vec![0, 1];
    let config = dir.path().join("sweep.json");
    std::fs::write(&config, serde_json::to_string(&cfg).unwrap()).unwrap();
    let path = |p: &Path| p.to_str().unwrap().to_string();
    let mut identical = true;
    let mut compared = 0;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        invex(&["sweep", "--config", &path(&config), "--out", &path(out)]);
        invex(&["gen", "--p", "8", "--k", "2", "--r", "30", "--seed", "4", "--out", &path(&out.join("data.csv"))]);
    }
    for name in
        ["results.csv", "aggregate.csv", "data.csv", "data.json", "mistakes.svg", "support.svg", "norm_error.svg"]
    {
        compared += 1;
        identical &= std::fs::read(a.join(name)).unwrap() == std::fs::read(b.join(name)).unwrap();
    }
    outcome(identical, format!("{compared} output files compared across two runs"))
}

type Criterion = (&'static str, Duration, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("lifting identity", Duration::from_secs(1), ac1_lifting),
        ("invexity certificate", Duration::from_secs(10), ac2_invexity),
        ("non-convexity witness", Duration::from_secs(1), ac3_nonconvexity),
        ("projection correctness", Duration::from_secs(30), ac4_projections),
        ("oracle equivalence", Duration::from_secs(120), ac5_oracle),
        ("KKT certification", Duration::from_secs(300), ac6_kkt),
        ("m-sweep reproduction (p = 50)", Duration::from_secs(1800), ac7_m_sweep),
        ("outlier-proportion sweep (p = 30)", Duration::from_secs(900), ac8_proportion_sweep),
        ("assumption diagnostics", Duration::from_secs(120), ac9_assumptions),
        ("determinism", Duration::from_secs(600), ac10_determinism),
    ];
    let mut failed = 0;
    for (i, (name, budget, run)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let out = run();
        let took = start.elapsed();
        let pass = out.pass && took <= budget;
        failed += !pass as usize;
        println!(
            "{} AC{} {name}: {} [{:.2} s, budget {} s]",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            out.detail,
            took.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
