//! Outlier-robust sparse linear regression through an invex relaxation of the
//! clean-subset selection problem.
//!
//! A sample `(x, y)` is lifted to `A = z z^T` with `z = [x; -y]`, which turns
//! every squared residual into a linear function of `[theta; 1][theta; 1]^T`.
//! The solver alternates between choosing the `m` samples with the smallest
//! lifted loss and a sparse positive semidefinite update of the lifted
//! parameter. `certify` rebuilds the dual witness for a selection and reports
//! how far the optimality conditions hold.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod baselines;
pub mod certify;
pub mod datagen;
pub mod error;
pub mod experiment;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod plot;
pub mod projections;
pub mod solver;

pub use baselines::{run_baseline, BaselineConfig, BaselineMethod};
pub use certify::{certify, CertificationReport, CertifyConfig, DualCertificate, KKTReport};
pub use datagen::{default_clean_count, generate, selection_size, GenSpec};
pub use error::{Error, Result};
pub use experiment::{run_sweep, ExperimentConfig, Method, ResultRow, SweepResults};
pub use io::{read_dataset, write_dataset};
pub use model::{Dataset, GroundTruthConfig, Label, LiftedSample, Vartheta};
pub use oracle::{enumerate_best_subset, OracleConfig, OracleResult};
pub use solver::{solve_invex, SolveResult, SolverConfig};
