//! Limited-memory preconditioners.
//!
//! The production path is the factored spectral-LMP
//! `C_k = prod_i (I - (1 - theta_i^{-1/2}) u_i u_i^T)` with `P_k = C_k C_k^T`.
//! The dense general and Ritz forms are kept as test oracles.

use nalgebra::DMatrix;

use crate::error::{check_len, Error, Result};
use crate::linalg::dot;
use crate::ritz::RitzPairs;

/// A split preconditioner `P = C C^T` given by its actions.
pub trait SplitPreconditioner: Sync {
    /// `C v`
    fn apply(&self, v: &[f64]) -> Result<Vec<f64>>;
    /// `C^T v`
    fn apply_t(&self, v: &[f64]) -> Result<Vec<f64>>;
}

/// The identity preconditioner.
#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl SplitPreconditioner for Identity {
    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        Ok(v.to_vec())
    }
    fn apply_t(&self, v: &[f64]) -> Result<Vec<f64>> {
        Ok(v.to_vec())
    }
}

/// Factored spectral-LMP built from `k` orthonormal vectors and positive values.
#[derive(Debug, Clone, PartialEq)]
pub struct LmpFactor {
    vectors: DMatrix<f64>,
    values: Vec<f64>,
    coeffs: Vec<f64>,
}

impl LmpFactor {
    /// The `k = 0` factor, i.e. the identity on an `n`-dimensional space.
    pub fn identity(n: usize) -> Self {
        Self {
            vectors: DMatrix::zeros(n, 0),
            values: Vec::new(),
            coeffs: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn rank(&self) -> usize {
        self.values.len()
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn rank_one(&self, i: usize, v: &mut [f64]) {
        let c = self.coeffs[i];
        if c == 0.0 {
            return;
        }
        let u = self.vectors.column(i);
        let s = c * dot(u.as_slice(), v);
        for (vj, uj) in v.iter_mut().zip(u.iter()) {
            *vj -= s * uj;
        }
    }

    /// `C_k v`, applying the rank-one factors right to left (`i = k..1`).
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("LMP factor input", self.dim(), v.len())?;
        let mut out = v.to_vec();
        for i in (0..self.rank()).rev() {
            self.rank_one(i, &mut out);
        }
        Ok(out)
    }

    /// `C_k^T v`, the factors in the reverse order of [`LmpFactor::apply`].
    pub fn apply_t(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("LMP factor input", self.dim(), v.len())?;
        let mut out = v.to_vec();
        for i in 0..self.rank() {
            self.rank_one(i, &mut out);
        }
        Ok(out)
    }

    /// The same factor expressed in the coordinates of an orthonormal basis
    /// whose span contains every `u_i`.
    pub fn restricted(&self, basis: &DMatrix<f64>) -> LmpFactor {
        LmpFactor {
            vectors: basis.tr_mul(&self.vectors),
            values: self.values.clone(),
            coeffs: self.coeffs.clone(),
        }
    }

    /// Dense `P_k = I - sum_i (1 - theta_i^{-1}) u_i u_i^T`.
    pub fn dense_preconditioner(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut p = DMatrix::identity(n, n);
        for (i, &theta) in self.values.iter().enumerate() {
            let u = self.vectors.column(i);
            p -= (u * u.transpose()) * (1.0 - 1.0 / theta);
        }
        p
    }
}

impl SplitPreconditioner for LmpFactor {
    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        LmpFactor::apply(self, v)
    }
    fn apply_t(&self, v: &[f64]) -> Result<Vec<f64>> {
        LmpFactor::apply_t(self, v)
    }
}

/// Builds the factored spectral-LMP from approximate eigenpairs.
///
/// Values below one are accepted; only non-positive values are rejected.
pub fn build_spectral_lmp(pairs: &RitzPairs) -> Result<LmpFactor> {
    for (index, &value) in pairs.values.iter().enumerate() {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::NonPositiveRitzValue { index, value });
        }
    }
    Ok(LmpFactor {
        vectors: pairs.vectors.clone(),
        values: pairs.values.clone(),
        coeffs: pairs.values.iter().map(|t| 1.0 - 1.0 / t.sqrt()).collect(),
    })
}

fn spd_inverse(m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = m.nrows();
    m.cholesky()
        .map(|c| c.inverse())
        .ok_or(Error::RankDeficient { rank: 0, cols: k })
}

/// Dense general LMP
/// `(I - S (S^T A S)^-1 S^T A)(I - A S (S^T A S)^-1 S^T) + S (S^T A S)^-1 S^T`.
pub fn build_general_lmp_dense(s: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    check_len("LMP basis rows", n, s.nrows())?;
    let k = s.ncols();
    let rank = crate::linalg::numerical_rank(s);
    if rank < k {
        return Err(Error::RankDeficient { rank, cols: k });
    }
    // The preconditioner depends only on span(S), so work with an orthonormal
    // basis to keep S^T A S as well conditioned as A itself.
    let s = &crate::linalg::orthonormalize(s)?;
    let as_ = a * s;
    let inner = spd_inverse(s.transpose() * &as_)?;
    let proj = s * &inner;
    let id = DMatrix::<f64>::identity(n, n);
    let left = &id - &proj * as_.transpose();
    let right = &id - &as_ * proj.transpose();
    Ok(left * right + &proj * s.transpose())
}

/// Dense Ritz-LMP
/// `(I - U Theta^-1 U^T A)(I - A U Theta^-1 U^T) + U Theta^-1 U^T`.
pub fn build_ritz_lmp_dense(u: &DMatrix<f64>, theta: &[f64], a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    check_len("Ritz vectors rows", n, u.nrows())?;
    check_len("Ritz values", u.ncols(), theta.len())?;
    for (index, &value) in theta.iter().enumerate() {
        if value.is_nan() || value <= 0.0 {
            return Err(Error::NonPositiveRitzValue { index, value });
        }
    }
    let mut u_scaled = u.clone();
    for (j, &t) in theta.iter().enumerate() {
        u_scaled.column_mut(j).scale_mut(1.0 / t);
    }
    let proj = &u_scaled * u.transpose();
    let id = DMatrix::<f64>::identity(n, n);
    let left = &id - &proj * a;
    let right = &id - a * &proj;
    Ok(left * right + proj)
}
