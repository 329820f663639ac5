//! Background, model-error and observation-error covariances.
//!
//! Matrices are dense; the desk-scale problems here have at most a few hundred
//! variables per block.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::linalg::sorted_symmetric_eigen;
use crate::random::{seeded_rng, standard_normals};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovarianceKind {
    Diagonal,
    /// Second-order auto-regressive correlation `(1 + r/L) exp(-r/L)`.
    Soar,
    /// Inverse-squared shifted periodic Laplacian.
    Laplacian,
}

/// Parameters of a homogeneous covariance on a periodic grid.
///
/// `length_scale` is measured in grid spacings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceSpec {
    pub kind: CovarianceKind,
    pub sigma: f64,
    pub length_scale: f64,
    pub n: usize,
}

impl CovarianceSpec {
    pub fn diagonal(n: usize, sigma: f64) -> Self {
        Self {
            kind: CovarianceKind::Diagonal,
            sigma,
            length_scale: 0.0,
            n,
        }
    }

    pub fn soar(n: usize, sigma: f64, length_scale: f64) -> Self {
        Self {
            kind: CovarianceKind::Soar,
            sigma,
            length_scale,
            n,
        }
    }

    pub fn laplacian(n: usize, sigma: f64, length_scale: f64) -> Self {
        Self {
            kind: CovarianceKind::Laplacian,
            sigma,
            length_scale,
            n,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "standard deviation must be positive, got {}",
                self.sigma
            )));
        }
        if self.kind != CovarianceKind::Diagonal
            && !(self.length_scale > 0.0 && self.length_scale.is_finite())
        {
            return Err(Error::InvalidParameter(format!(
                "length scale must be positive, got {}",
                self.length_scale
            )));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<DMatrix<f64>> {
        match self.kind {
            CovarianceKind::Diagonal => {
                self.validate()?;
                Ok(DMatrix::identity(self.n, self.n) * self.sigma.powi(2))
            }
            CovarianceKind::Soar => build_soar(self),
            CovarianceKind::Laplacian => build_laplacian_corr(self),
        }
    }
}

/// Chord length between grid points `i` and `j` on a circle of circumference
/// `n` grid spacings.
fn chordal_distance(i: usize, j: usize, n: usize) -> f64 {
    let nf = n as f64;
    nf / std::f64::consts::PI * (std::f64::consts::PI * i.abs_diff(j) as f64 / nf).sin()
}

fn smallest_eigenvalue(c: &DMatrix<f64>) -> f64 {
    c.clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// SOAR covariance on the periodic grid.
///
/// Distances are chord lengths of the circle the periodic domain wraps onto.
/// Arc (minimum cyclic index) distance does not give a positive definite
/// matrix for length scales that are a sizeable fraction of the domain.
pub fn build_soar(spec: &CovarianceSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let n = spec.n;
    let var = spec.sigma * spec.sigma;
    let l = spec.length_scale;
    let c = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            return var;
        }
        let r = chordal_distance(i, j, n) / l;
        var * (1.0 + r) * (-r).exp()
    });
    let lambda_min = smallest_eigenvalue(&c);
    if lambda_min <= 0.0 {
        return Err(Error::NotPositiveDefinite {
            eigenvalue: lambda_min,
        });
    }
    Ok(c)
}

/// Laplacian correlation `sigma^2 g (I + L^2 Lap)^-2`, where `Lap` is the
/// periodic second-difference matrix with stencil (-1, 2, -1), `L` is in grid
/// units and `g` normalizes the diagonal to one.
pub fn build_laplacian_corr(spec: &CovarianceSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let n = spec.n;
    let l2 = spec.length_scale * spec.length_scale;
    let mut m = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        m[(i, i)] += 2.0 * l2;
        m[(i, (i + 1) % n)] -= l2;
        m[(i, (i + n - 1) % n)] -= l2;
    }
    // I + L^2 Lap has eigenvalues >= 1, so the inverse always exists.
    let inv = m.try_inverse().expect("shifted Laplacian is nonsingular");
    let c0 = &inv * &inv;
    let diag_max = c0.diagonal().max();
    assert!(diag_max > 0.0, "normalization of Laplacian correlation");
    let mut c = c0 * (spec.sigma * spec.sigma / diag_max);
    c = (&c + c.transpose()) * 0.5;
    Ok(c)
}

/// Symmetric square root of an SPD matrix, with its inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceFactor {
    half: DMatrix<f64>,
    inv_half: DMatrix<f64>,
}

impl CovarianceFactor {
    pub fn identity(n: usize) -> Self {
        Self {
            half: DMatrix::identity(n, n),
            inv_half: DMatrix::identity(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.half.nrows()
    }

    pub fn half(&self) -> &DMatrix<f64> {
        &self.half
    }

    pub fn inv_half(&self) -> &DMatrix<f64> {
        &self.inv_half
    }

    /// `C^{1/2} v`
    pub fn apply_half(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("covariance square root", self.dim(), v.len())?;
        Ok(mat_vec(&self.half, v))
    }

    /// `C^{-1/2} v`
    pub fn apply_inv_half(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("inverse covariance square root", self.dim(), v.len())?;
        Ok(mat_vec(&self.inv_half, v))
    }

    /// The covariance itself, `half * half`.
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.half * &self.half
    }
}

fn mat_vec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    let out = m * DVector::from_column_slice(v);
    out.iter().copied().collect()
}

/// Principal square root via the eigendecomposition `C = V diag(l) V^T`.
pub fn sym_sqrt(c: &DMatrix<f64>) -> Result<CovarianceFactor> {
    if c.nrows() != c.ncols() {
        return Err(Error::DimensionMismatch {
            context: "sym_sqrt (square matrix)",
            expected: c.nrows(),
            actual: c.ncols(),
        });
    }
    let n = c.nrows();
    if n == 0 {
        return Ok(CovarianceFactor::identity(0));
    }
    let (values, vectors) = sorted_symmetric_eigen(c);
    let smallest = *values.last().expect("non-empty");
    if smallest <= 0.0 {
        return Err(Error::NotPositiveDefinite {
            eigenvalue: smallest,
        });
    }
    let scaled = |f: &dyn Fn(f64) -> f64| {
        let mut v = vectors.clone();
        for (j, &lam) in values.iter().enumerate() {
            let s = f(lam);
            v.column_mut(j).scale_mut(s);
        }
        let m = &v * vectors.transpose();
        (&m + m.transpose()) * 0.5
    };
    Ok(CovarianceFactor {
        half: scaled(&|l| l.sqrt()),
        inv_half: scaled(&|l| 1.0 / l.sqrt()),
    })
}

/// `half * g` with `g` standard normal from the seeded generator.
pub fn sample_noise(factor: &CovarianceFactor, seed: u64) -> Vec<f64> {
    let mut rng = seeded_rng(seed);
    sample_noise_with(factor, &mut rng)
}

pub fn sample_noise_with<R: rand::Rng + ?Sized>(factor: &CovarianceFactor, rng: &mut R) -> Vec<f64> {
    let g = standard_normals(rng, factor.dim());
    if g.is_empty() {
        return g;
    }
    mat_vec(&factor.half, &g)
}

/// Block-diagonal `D = diag(B, Q, ..., Q)` acting on a control vector.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCovariance {
    background: CovarianceFactor,
    model_error: CovarianceFactor,
    steps: usize,
}

impl BlockCovariance {
    pub fn new(background: CovarianceFactor, model_error: CovarianceFactor, steps: usize) -> Result<Self> {
        check_len("model-error covariance", background.dim(), model_error.dim())?;
        Ok(Self {
            background,
            model_error,
            steps,
        })
    }

    pub fn n(&self) -> usize {
        self.background.dim()
    }

    pub fn dim(&self) -> usize {
        self.n() * (self.steps + 1)
    }

    pub fn background(&self) -> &CovarianceFactor {
        &self.background
    }

    pub fn model_error(&self) -> &CovarianceFactor {
        &self.model_error
    }

    fn blockwise(&self, v: &[f64], inverse: bool) -> Result<Vec<f64>> {
        check_len("block covariance", self.dim(), v.len())?;
        let n = self.n();
        let mut out = Vec::with_capacity(v.len());
        for (i, block) in v.chunks_exact(n).enumerate() {
            let f = if i == 0 { &self.background } else { &self.model_error };
            let m = if inverse { &f.inv_half } else { &f.half };
            out.extend(mat_vec(m, block));
        }
        Ok(out)
    }

    /// `D^{1/2} v`
    pub fn apply_half(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.blockwise(v, false)
    }

    /// `D^{-1/2} v`
    pub fn apply_inv_half(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.blockwise(v, true)
    }
}
