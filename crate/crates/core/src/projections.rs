//! Euclidean projections and proximal maps for the feasible set of the relaxation.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{ensure_finite, Error, Result};
use crate::linalg::{soft_threshold, symmetrize};
use crate::model::Vartheta;

pub const DEFAULT_PSD_ITERS: usize = 50;
pub const DEFAULT_PSD_TOL: f64 = 1e-9;

/// `{ b in [0, 1]^n : sum_i b_i >= m }`
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BFeasibleSet {
    pub n: usize,
    pub m: usize,
}

impl BFeasibleSet {
    pub fn new(n: usize, m: usize) -> Result<Self> {
        if m > n {
            return Err(Error::InfeasibleM { m, n });
        }
        Ok(Self { n, m })
    }

    pub fn contains(&self, b: &DVector<f64>, tol: f64) -> bool {
        b.len() == self.n && b.iter().all(|v| *v >= -tol && *v <= 1.0 + tol) && b.sum() >= self.m as f64 - tol
    }
}

fn clipped_sum(v: &DVector<f64>, shift: f64) -> f64 {
    v.iter().map(|x| (x + shift).clamp(0.0, 1.0)).sum()
}

/// Euclidean projection onto [`BFeasibleSet`].
///
/// Clips to the box; if the budget constraint is then violated, finds the shift
/// `mu > 0` with `sum_i clip(v_i + mu) = m` by scanning the sorted breakpoints
/// of the piecewise-linear map `mu -> sum_i clip(v_i + mu)`.
pub fn project_b(v: &DVector<f64>, set: &BFeasibleSet) -> Result<DVector<f64>> {
    if v.len() != set.n {
        return Err(Error::DimensionMismatch(format!("v has {} entries, set has n = {}", v.len(), set.n)));
    }
    if set.m > set.n {
        return Err(Error::InfeasibleM { m: set.m, n: set.n });
    }
    ensure_finite(v.iter(), "project_b input")?;
    let target = set.m as f64;
    if clipped_sum(v, 0.0) >= target {
        return Ok(v.map(|x| x.clamp(0.0, 1.0)));
    }

    let mut breakpoints: Vec<f64> = v.iter().flat_map(|x| [-x, 1.0 - x]).filter(|mu| *mu > 0.0).collect();
    breakpoints.sort_by(f64::total_cmp);
    breakpoints.dedup();

    // first breakpoint at which the clipped sum reaches the target
    let idx = breakpoints.partition_point(|mu| clipped_sum(v, *mu) < target);
    let hi = breakpoints[idx.min(breakpoints.len() - 1)];
    let lo = if idx == 0 { 0.0 } else { breakpoints[idx - 1] };
    let (s_lo, s_hi) = (clipped_sum(v, lo), clipped_sum(v, hi));
    let mu = if s_hi > s_lo { lo + (target - s_lo) * (hi - lo) / (s_hi - s_lo) } else { hi };
    Ok(v.map(|x| (x + mu).clamp(0.0, 1.0)))
}

/// Entry-wise soft threshold: the proximal map of `tau * ||.||_1`.
pub fn prox_entrywise_l1(m: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    m.map(|v| soft_threshold(v, tau))
}

/// Corner entry of the PSD part of `z + shift * e e^T`, and its derivative in `shift`.
fn corner_of_psd_part(z: &DMatrix<f64>, shift: f64) -> (f64, f64, SymmetricEigen<f64, nalgebra::Dyn>) {
    let c = z.nrows() - 1;
    let mut shifted = z.clone();
    shifted[(c, c)] += shift;
    let eig = SymmetricEigen::new(shifted);
    let vals = &eig.eigenvalues;
    let q = &eig.eigenvectors;
    let d = vals.len();
    let mut value = 0.0;
    let mut slope = 0.0;
    for k in 0..d {
        let wk = q[(c, k)] * q[(c, k)];
        value += vals[k].max(0.0) * wk;
        for l in 0..d {
            let wl = q[(c, l)] * q[(c, l)];
            let gap = vals[k] - vals[l];
            let ratio = if gap.abs() > 1e-12 * (1.0 + vals[k].abs()) {
                (vals[k].max(0.0) - vals[l].max(0.0)) / gap
            } else if vals[k] > 0.0 {
                1.0
            } else {
                0.0
            };
            slope += ratio * wk * wl;
        }
    }
    (value, slope, eig)
}

fn psd_part(eig: &SymmetricEigen<f64, nalgebra::Dyn>) -> DMatrix<f64> {
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let q = &eig.eigenvectors;
    let scaled = DMatrix::from_fn(q.nrows(), q.ncols(), |i, j| q[(i, j)] * clipped[j]);
    symmetrize(&(scaled * q.transpose()))
}

/// Exact projection onto `{V PSD, V[p][p] = 1}` (see [`project_psd_corner_warm`]).
pub fn project_psd_corner(m: &DMatrix<f64>, iters: usize, tol: f64) -> Result<Vartheta> {
    project_psd_corner_warm(m, iters, tol, None).map(|(v, _)| v)
}

/// Projection onto the PSD matrices with unit bottom-right corner.
///
/// The projection of `Z` is `P_psd(Z + s e e^T)` where the scalar `s` is the
/// multiplier of the corner constraint; `s` is found by a bracketed Newton
/// search on the monotone map `s -> P_psd(Z + s e e^T)[p][p]`. Whatever corner
/// drift remains after `iters` evaluations is removed by a PSD-preserving
/// repair, so the result always has corner exactly one.
///
/// Returns the projection and the multiplier, which callers can feed back as
/// `shift_hint` when projecting a nearby matrix.
pub fn project_psd_corner_warm(
    m: &DMatrix<f64>,
    iters: usize,
    tol: f64,
    shift_hint: Option<f64>,
) -> Result<(Vartheta, f64)> {
    if !m.is_square() || m.nrows() == 0 {
        return Err(Error::DimensionMismatch("projection input must be square and non-empty".into()));
    }
    ensure_finite(m.iter(), "project_psd_corner input")?;
    let z = symmetrize(m);
    let c = z.nrows() - 1;

    let mut s = shift_hint.unwrap_or(1.0 - z[(c, c)]);
    let (mut value, mut slope, mut eig) = corner_of_psd_part(&z, s);
    let mut lo: Option<f64> = None;
    let mut hi: Option<f64> = None;
    let mut step = 1.0f64.max(z.iter().fold(0.0f64, |a, v| a.max(v.abs())));

    for _ in 0..iters.max(1) {
        if (value - 1.0).abs() <= tol {
            break;
        }
        if value < 1.0 {
            lo = Some(s);
        } else {
            hi = Some(s);
        }
        let newton = if slope > 1e-14 { Some(s + (1.0 - value) / slope) } else { None };
        s = match (lo, hi) {
            (Some(a), Some(b)) => match newton {
                Some(t) if t > a && t < b => t,
                _ => 0.5 * (a + b),
            },
            (Some(a), None) => {
                let t = newton.filter(|t| *t > a).unwrap_or(a + step);
                step *= 2.0;
                t
            }
            (None, Some(b)) => {
                let t = newton.filter(|t| *t < b).unwrap_or(b - step);
                step *= 2.0;
                t
            }
            (None, None) => unreachable!("one side of the bracket is always set"),
        };
        (value, slope, eig) = corner_of_psd_part(&z, s);
    }

    let mut v = psd_part(&eig);
    let corner = v[(c, c)];
    if corner < 1.0 {
        // adding a multiple of e e^T keeps PSD
        v[(c, c)] = 1.0;
    } else {
        // congruence with diag(1, .., 1, 1/sqrt(corner)) keeps PSD
        let scale = 1.0 / corner.sqrt();
        for i in 0..c {
            v[(i, c)] *= scale;
            v[(c, i)] *= scale;
        }
        v[(c, c)] = 1.0;
    }
    Ok((Vartheta::from_matrix_unchecked(v), s))
}

/// Proximal map of `tau * ||.||_1` restricted to the PSD matrices with unit corner.
///
/// Dykstra-type splitting between the soft threshold and
/// [`project_psd_corner_warm`]. The first iterate is the plain composition
/// `project(soft(x))`; further rounds correct it towards the exact prox of the
/// sum and stop once the iterate moves less than `tol` (Frobenius).
pub fn prox_l1_psd_corner(
    x: &DMatrix<f64>,
    tau: f64,
    rounds: usize,
    tol: f64,
    psd_iters: usize,
    psd_tol: f64,
    shift_hint: Option<f64>,
) -> Result<(Vartheta, f64)> {
    ensure_finite(x.iter(), "prox input")?;
    let d = x.nrows();
    let mut p_corr = DMatrix::zeros(d, d);
    let mut q_corr = DMatrix::zeros(d, d);
    let mut cur = x.clone();
    let mut shift = shift_hint;
    let mut out: Option<Vartheta> = None;
    for _ in 0..rounds.max(1) {
        let y = prox_entrywise_l1(&(&cur + &p_corr), tau);
        p_corr = &cur + &p_corr - &y;
        let (next, s) = project_psd_corner_warm(&(&y + &q_corr), psd_iters, psd_tol, shift)?;
        q_corr = &y + &q_corr - &next.v;
        shift = Some(s);
        let moved = (&next.v - &cur).norm();
        cur = next.v.clone();
        out = Some(next);
        if moved <= tol {
            break;
        }
    }
    Ok((out.expect("at least one round"), shift.unwrap_or(0.0)))
}
