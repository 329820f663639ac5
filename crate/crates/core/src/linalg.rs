//! Small dense helpers shared by the solver modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted in
/// decreasing order; eigenvector columns follow the same order.
pub fn sorted_symmetric_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let sym = symmetrize(m);
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(m.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (values, vectors)
}

/// Eigenvalues of a symmetric matrix in increasing order.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut values: Vec<f64> = symmetrize(m).symmetric_eigenvalues().iter().copied().collect();
    values.sort_by(f64::total_cmp);
    values
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest absolute entry of `Q^T Q - I`.
pub fn orthonormality_defect(q: &DMatrix<f64>) -> f64 {
    let gram = q.transpose() * q;
    let mut worst = 0.0_f64;
    for j in 0..gram.ncols() {
        for i in 0..gram.nrows() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - target).abs());
        }
    }
    worst
}

/// Relative tolerance below which a diagonal entry of R marks a dependent column.
pub const RANK_TOL: f64 = 1e-11;

/// Orthonormal basis for the column space of `y`.
///
/// Householder QR is tried first. When a diagonal entry of R falls below
/// [`RANK_TOL`] relative to the largest one, the factorization is redone with
/// column pivoting and only the numerically independent directions are kept,
/// so the returned basis can have fewer columns than `y`.
pub fn orthonormalize(y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let cols = y.ncols();
    if cols == 0 {
        return Ok(y.clone());
    }
    let qr = y.clone().qr();
    let r = qr.r();
    let diag_max = (0..cols).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if diag_max == 0.0 || !diag_max.is_finite() {
        return Err(Error::RankCollapse);
    }
    if (0..cols).all(|i| r[(i, i)].abs() > RANK_TOL * diag_max) {
        return Ok(qr.q());
    }
    let piv = y.clone().col_piv_qr();
    let r = piv.r();
    let lead = r[(0, 0)].abs();
    if lead == 0.0 {
        return Err(Error::RankCollapse);
    }
    let rank = (0..cols)
        .take_while(|&i| r[(i, i)].abs() > RANK_TOL * lead)
        .count();
    let q = piv.q();
    Ok(q.columns(0, rank).into_owned())
}

/// Numerical rank of `y` under the same criterion as [`orthonormalize`].
pub fn numerical_rank(y: &DMatrix<f64>) -> usize {
    if y.ncols() == 0 {
        return 0;
    }
    let piv = y.clone().col_piv_qr();
    let r = piv.r();
    let lead = r[(0, 0)].abs();
    if lead == 0.0 {
        return 0;
    }
    (0..r.nrows().min(r.ncols()))
        .take_while(|&i| r[(i, i)].abs() > RANK_TOL * lead)
        .count()
}

pub fn column(m: &DMatrix<f64>, j: usize) -> Vec<f64> {
    m.column(j).iter().copied().collect()
}

pub fn from_columns(rows: usize, cols: &[Vec<f64>]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols.len());
    for (j, c) in cols.iter().enumerate() {
        m.set_column(j, &DVector::from_column_slice(c));
    }
    m
}

/// Frobenius norm of `a - b`.
pub fn frobenius_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_is_sorted_descending() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 5.0, 3.0]));
        let (vals, vecs) = sorted_symmetric_eigen(&m);
        assert_eq!(vals, vec![5.0, 3.0, 1.0]);
        assert!((vecs[(1, 0)].abs() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn orthonormalize_drops_dependent_columns() {
        let y = DMatrix::from_column_slice(3, 3, &[1.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let q = orthonormalize(&y).unwrap();
        assert_eq!(q.ncols(), 2);
        assert!(orthonormality_defect(&q) < 1e-14);
    }

    #[test]
    fn orthonormalize_zero_matrix_is_collapse() {
        let y = DMatrix::<f64>::zeros(4, 2);
        assert_eq!(orthonormalize(&y), Err(Error::RankCollapse));
    }
}
