//! Small dense linear algebra helpers shared by the solver and the certificate checks.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sorted_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    vals
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sorted_eigenvalues(m).first().copied().unwrap_or(0.0)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let n = m.nrows();
    (0..n).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol * (1.0 + m[(i, j)].abs())))
}

/// Frobenius inner product `<a, b> = sum_ij a_ij b_ij`.
pub fn frobenius_inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Entry-wise l1 norm over every entry of the matrix.
pub fn entrywise_l1(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v.abs()).sum()
}

/// Matrix-induced infinity norm (maximum absolute row sum).
pub fn induced_inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter().map(|row| row.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

pub fn l1_norm(v: &DVector<f64>) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

pub fn soft_threshold(v: f64, tau: f64) -> f64 {
    if v > tau {
        v - tau
    } else if v < -tau {
        v + tau
    } else {
        0.0
    }
}

/// Rows of `x` picked by `rows`, in the given order.
pub fn select_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)])
}

pub fn select_columns(x: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), cols.len(), |i, j| x[(i, cols[j])])
}

pub fn select_entries(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_fn(idx.len(), |i, _| v[idx[i]])
}

pub fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// Largest eigenvalue of `x^T x`, i.e. the squared spectral norm of `x`.
pub fn gram_spectral_norm(x: &DMatrix<f64>) -> f64 {
    if x.ncols() == 0 || x.nrows() == 0 {
        return 0.0;
    }
    let gram = x.transpose() * x;
    sorted_eigenvalues(&gram).last().copied().unwrap_or(0.0).max(0.0)
}

/// Indices whose selection flag is set.
pub fn selected_indices(selection: &[bool]) -> Vec<usize> {
    selection.iter().enumerate().filter_map(|(i, &s)| s.then_some(i)).collect()
}

/// Indices `j` with `|v_j| > zero_tol`.
pub fn support_of(v: &DVector<f64>, zero_tol: f64) -> Vec<usize> {
    v.iter().enumerate().filter_map(|(i, x)| (x.abs() > zero_tol).then_some(i)).collect()
}
