//! Randomized estimates of the leading eigenpairs of a symmetric operator.
//!
//! | method  | block products with `A` | extra factorizations        |
//! |---------|-------------------------|-----------------------------|
//! | REVD    | 2                       | orthonormalize `Y`          |
//! | Nystrom | 2                       | orthonormalize `Y`, Cholesky, SVD |
//! | ritzit  | 1                       | orthonormalize `G`, QR of `Y` |
//!
//! Each method draws its Gaussian start matrix from the seed in
//! [`SketchConfig`], so the output is a pure function of operator and config.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linalg::{orthonormality_defect, orthonormalize, sorted_symmetric_eigen, symmetrize};
use crate::operators::{apply_block, LinearOperator};
use crate::random::{seeded_rng, standard_normals};
use crate::ritz::{RitzPairs, RitzSource};

/// Gram deviation above which a basis is rejected as not orthonormal.
pub const ORTHONORMAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SketchMethod {
    Revd,
    Nystrom,
    Ritzit,
}

impl SketchMethod {
    pub fn name(self) -> &'static str {
        match self {
            SketchMethod::Revd => "revd",
            SketchMethod::Nystrom => "nystrom",
            SketchMethod::Ritzit => "ritzit",
        }
    }

    pub fn source(self) -> RitzSource {
        match self {
            SketchMethod::Revd => RitzSource::Revd,
            SketchMethod::Nystrom => RitzSource::Nystrom,
            SketchMethod::Ritzit => RitzSource::Ritzit,
        }
    }

    /// Number of block products with the operator.
    pub fn block_products(self) -> usize {
        match self {
            SketchMethod::Revd | SketchMethod::Nystrom => 2,
            SketchMethod::Ritzit => 1,
        }
    }
}

impl std::str::FromStr for SketchMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "revd" => Ok(SketchMethod::Revd),
            "nystrom" => Ok(SketchMethod::Nystrom),
            "ritzit" | "revd_ritzit" => Ok(SketchMethod::Ritzit),
            other => Err(Error::InvalidParameter(format!("unknown sketch method '{other}'"))),
        }
    }
}

/// Target rank, oversampling and seed of a randomized eigensolve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SketchConfig {
    pub method: SketchMethod,
    pub rank: usize,
    pub oversampling: usize,
    pub seed: u64,
}

impl SketchConfig {
    pub fn new(method: SketchMethod, rank: usize, oversampling: usize, seed: u64) -> Self {
        Self {
            method,
            rank,
            oversampling,
            seed,
        }
    }

    /// Sketch width `k + l`.
    pub fn width(&self) -> usize {
        self.rank + self.oversampling
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::InvalidParameter("target rank must be at least 1".into()));
        }
        if self.width() > dim {
            return Err(Error::InvalidParameter(format!(
                "sketch width {} exceeds operator dimension {dim}",
                self.width()
            )));
        }
        Ok(())
    }
}

/// `rows x cols` matrix of independent standard normals, filled column by
/// column from a ChaCha8 stream seeded with `seed`.
pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = seeded_rng(seed);
    DMatrix::from_vec(rows, cols, standard_normals(&mut rng, rows * cols))
}

fn sorted_pairs(
    basis: &DMatrix<f64>,
    projected: &DMatrix<f64>,
    source: RitzSource,
) -> RitzPairs {
    let (values, w) = sorted_symmetric_eigen(projected);
    RitzPairs {
        vectors: basis * w,
        values,
        source,
    }
}

/// Rayleigh-Ritz: `K = Z^T A Z = W Theta W^T`, `U = Z W`.
pub fn rayleigh_ritz<O: LinearOperator + ?Sized>(
    op: &O,
    z: &DMatrix<f64>,
    exec: Execution,
) -> Result<RitzPairs> {
    let deviation = orthonormality_defect(z);
    if deviation > ORTHONORMAL_TOL {
        return Err(Error::NotOrthonormal { deviation });
    }
    let az = apply_block(op, z, exec)?;
    let k = symmetrize(&(z.transpose() * az));
    Ok(sorted_pairs(z, &k, RitzSource::Exact))
}

/// Drops trailing pairs so at most `k` remain, and removes non-positive values.
fn finish(mut pairs: RitzPairs, k: usize, source: RitzSource) -> Result<RitzPairs> {
    pairs.source = source;
    let theta_max = pairs.values.first().copied().unwrap_or(0.0);
    let positive = pairs
        .values
        .iter()
        .take_while(|&&v| v > crate::linalg::RANK_TOL * theta_max)
        .count();
    if positive == 0 {
        return Err(Error::RankCollapse);
    }
    Ok(pairs.truncate(k.min(positive)))
}

/// REVD: `Y = A G`, `Z = orth(Y)`, Rayleigh-Ritz on `Z`, keep the leading `k`.
pub fn revd<O: LinearOperator + ?Sized>(op: &O, cfg: &SketchConfig, exec: Execution) -> Result<RitzPairs> {
    let n = op.dim();
    cfg.validate(n)?;
    let g = gaussian_matrix(n, cfg.width(), cfg.seed);
    let y = apply_block(op, &g, exec)?;
    let z = orthonormalize(&y)?;
    let pairs = rayleigh_ritz(op, &z, exec)?;
    finish(pairs, cfg.rank, RitzSource::Revd)
}

/// Nystrom: with `Z = orth(A G)`, `E1 = A Z`, `E2 = Z^T E1 = C^T C`,
/// `F = E1 C^{-1}`, `F = U Sigma V^T`, `Theta = Sigma^2`.
pub fn nystrom<O: LinearOperator + ?Sized>(op: &O, cfg: &SketchConfig, exec: Execution) -> Result<RitzPairs> {
    let n = op.dim();
    cfg.validate(n)?;
    let g = gaussian_matrix(n, cfg.width(), cfg.seed);
    let y = apply_block(op, &g, exec)?;
    let z = orthonormalize(&y)?;
    let e1 = apply_block(op, &z, exec)?;
    let e2 = symmetrize(&(z.transpose() * &e1));
    // nalgebra returns the lower factor L = C^T.
    let chol = e2.cholesky().ok_or(Error::CholeskyFailed)?;
    let l = chol.l();
    // F C = E1  <=>  L F^T = E1^T
    let ft = l
        .solve_lower_triangular(&e1.transpose())
        .ok_or(Error::CholeskyFailed)?;
    let f = ft.transpose();
    let svd = f.svd(true, false);
    let u = svd.u.as_ref().expect("requested U");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let values = order.iter().map(|&i| svd.singular_values[i].powi(2)).collect();
    let vectors = DMatrix::from_fn(n, order.len(), |r, c| u[(r, order[c])]);
    let pairs = RitzPairs {
        vectors,
        values,
        source: RitzSource::Nystrom,
    };
    finish(pairs, cfg.rank, RitzSource::Nystrom)
}

/// REVD based on ritzit: `G3 = orth(G)`, `A G3 = Z3 R3`,
/// `R3 R3^T = W3 Theta3^2 W3^T`, `U3 = Z3 W3`. One block product.
pub fn revd_ritzit<O: LinearOperator + ?Sized>(
    op: &O,
    cfg: &SketchConfig,
    exec: Execution,
) -> Result<RitzPairs> {
    let n = op.dim();
    cfg.validate(n)?;
    let g = gaussian_matrix(n, cfg.width(), cfg.seed);
    let g3 = orthonormalize(&g)?;
    let y3 = apply_block(op, &g3, exec)?;
    let qr = y3.qr();
    let z3 = qr.q();
    let r3 = qr.r();
    let k3 = symmetrize(&(&r3 * r3.transpose()));
    let (squared, w3) = sorted_symmetric_eigen(&k3);
    let values = squared.iter().map(|s| s.max(0.0).sqrt()).collect();
    let pairs = RitzPairs {
        vectors: z3 * w3,
        values,
        source: RitzSource::Ritzit,
    };
    finish(pairs, cfg.rank, RitzSource::Ritzit)
}

/// Dispatches on [`SketchConfig::method`].
pub fn sketch<O: LinearOperator + ?Sized>(op: &O, cfg: &SketchConfig, exec: Execution) -> Result<RitzPairs> {
    match cfg.method {
        SketchMethod::Revd => revd(op, cfg, exec),
        SketchMethod::Nystrom => nystrom(op, cfg, exec),
        SketchMethod::Ritzit => revd_ritzit(op, cfg, exec),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::DenseOperator;
    use nalgebra::DVector;

    #[test]
    fn gaussian_matrix_is_reproducible() {
        assert_eq!(gaussian_matrix(7, 3, 11), gaussian_matrix(7, 3, 11));
        assert!((gaussian_matrix(7, 3, 11) - gaussian_matrix(7, 3, 12)).norm() > 0.0);
    }

    #[test]
    fn gaussian_matrix_moments() {
        let g = gaussian_matrix(1000, 1000, 5);
        let n = g.len() as f64;
        let mean = g.sum() / n;
        let var = g.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn identity_operator_gives_unit_values() {
        let op = DenseOperator(DMatrix::identity(30, 30));
        for method in [SketchMethod::Revd, SketchMethod::Nystrom, SketchMethod::Ritzit] {
            let cfg = SketchConfig::new(method, 4, 3, 99);
            let pairs = sketch(&op, &cfg, Execution::Serial).unwrap();
            assert_eq!(pairs.len(), 4);
            assert!(pairs.values.iter().all(|v| (v - 1.0).abs() < 1e-12), "{method:?}");
        }
    }

    #[test]
    fn rayleigh_ritz_single_vector_is_rayleigh_quotient() {
        let a = DMatrix::from_fn(5, 5, |i, j| 1.0 / (1 + i + j) as f64 + if i == j { 2.0 } else { 0.0 });
        let z = DMatrix::identity(5, 1);
        let pairs = rayleigh_ritz(&DenseOperator(a.clone()), &z, Execution::Serial).unwrap();
        assert!((pairs.values[0] - a[(0, 0)]).abs() < 1e-15);
    }

    #[test]
    fn rayleigh_ritz_rejects_non_orthonormal() {
        let z = DMatrix::from_element(4, 2, 1.0);
        let op = DenseOperator(DMatrix::identity(4, 4));
        assert!(matches!(
            rayleigh_ritz(&op, &z, Execution::Serial),
            Err(Error::NotOrthonormal { .. })
        ));
    }

    #[test]
    fn invariant_subspace_gives_exact_eigenvalues() {
        let d = DVector::from_vec(vec![7.0, 5.0, 3.0, 2.0, 1.0, 1.0]);
        let op = DenseOperator(DMatrix::from_diagonal(&d));
        let z = DMatrix::identity(6, 3);
        let pairs = rayleigh_ritz(&op, &z, Execution::Serial).unwrap();
        for (v, e) in pairs.values.iter().zip([7.0, 5.0, 3.0]) {
            assert!((v - e).abs() < 1e-10);
        }
    }

    #[test]
    fn config_validation() {
        let op = DenseOperator(DMatrix::identity(6, 6));
        let too_wide = SketchConfig::new(SketchMethod::Revd, 4, 3, 1);
        assert!(revd(&op, &too_wide, Execution::Serial).is_err());
        let zero = SketchConfig::new(SketchMethod::Revd, 0, 3, 1);
        assert!(revd(&op, &zero, Execution::Serial).is_err());
    }

    #[test]
    fn zero_operator_collapses() {
        let op = DenseOperator(DMatrix::zeros(10, 10));
        let cfg = SketchConfig::new(SketchMethod::Revd, 2, 1, 3);
        assert_eq!(revd(&op, &cfg, Execution::Serial), Err(Error::RankCollapse));
    }
}
