//! Recovery metrics and the theoretical error bound.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::Label;

pub const DEFAULT_ZERO_TOL: f64 = 1e-6;

/// `|supp(a) ∩ supp(b)| / |supp(a) ∪ supp(b)|`, one when both supports are empty.
pub fn support_jaccard(theta_hat: &DVector<f64>, theta_star: &DVector<f64>, zero_tol: f64) -> Result<f64> {
    if theta_hat.len() != theta_star.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {} coordinates", theta_hat.len(), theta_star.len())));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (a, b) in theta_hat.iter().zip(theta_star.iter()) {
        let (ia, ib) = (a.abs() > zero_tol, b.abs() > zero_tol);
        inter += (ia && ib) as usize;
        union += (ia || ib) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

pub fn norm_error(theta_hat: &DVector<f64>, theta_star: &DVector<f64>) -> Result<f64> {
    if theta_hat.len() != theta_star.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {} coordinates", theta_hat.len(), theta_star.len())));
    }
    Ok((theta_hat - theta_star).norm())
}

/// Fraction of the `m` selected samples that are outliers.
pub fn clean_recovery_mistakes(b_rounded: &[bool], labels: &[Label], m: usize) -> Result<f64> {
    if b_rounded.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!("{} flags, {} labels", b_rounded.len(), labels.len())));
    }
    let selected = b_rounded.iter().filter(|&&b| b).count();
    if m == 0 || selected != m {
        return Err(Error::InvalidConfig(format!("selection has {selected} entries, expected m = {m}")));
    }
    let wrong = b_rounded.iter().zip(labels).filter(|(&b, &l)| b && l == Label::Outlier).count();
    Ok(wrong as f64 / m as f64)
}

/// `(2 + M) 2 lambda sqrt(k) / (alpha1 m)`
pub fn theory_delta_m(l1_budget: f64, lambda: f64, k: usize, alpha1: f64, m: usize) -> f64 {
    (2.0 + l1_budget) * 2.0 * lambda * (k as f64).sqrt() / (alpha1 * m as f64)
}
