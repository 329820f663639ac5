//! Split-preconditioned conjugate gradients and the Lanczos information that
//! falls out of them.

use nalgebra::DMatrix;

use crate::error::{check_len, Error, Result};
use crate::linalg::{axpy, dot, sorted_symmetric_eigen};
use crate::lmp::SplitPreconditioner;
use crate::operators::LinearOperator;
pub use crate::ritz::{RitzPairs, RitzSource};

/// Default relative tolerance on the preconditioned residual norm.
pub const DEFAULT_REL_TOL: f64 = 1e-6;

/// Ritz values closer than this (relative to the largest) are treated as ghosts.
pub const GHOST_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct PcgOptions {
    pub max_iter: usize,
    pub rel_tol: f64,
    /// Re-orthogonalize each residual against all previous normalized
    /// residuals (modified Gram-Schmidt).
    pub reorthogonalize: bool,
    /// Keep the normalized residuals `f_j` for Ritz-vector extraction.
    pub keep_residuals: bool,
}

impl Default for PcgOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            rel_tol: DEFAULT_REL_TOL,
            reorthogonalize: false,
            keep_residuals: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Tolerance,
    MaxIterations,
    /// The initial residual was exactly zero.
    ZeroResidual,
}

/// Per-solve record of the CG recurrence.
///
/// `residual_norms` and `quadratic_cost` start at iteration 0; `alphas` and
/// `betas` have one entry per iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct CgHistory {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub residual_norms: Vec<f64>,
    pub normalized_residuals: Vec<Vec<f64>>,
    pub quadratic_cost: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub reason: StopReason,
    /// Operator-vector products performed by the solve.
    pub operator_applies: usize,
}

impl CgHistory {
    /// `||r_j|| / ||r_0||` for every recorded iteration.
    pub fn relative_residuals(&self) -> Vec<f64> {
        let r0 = self.residual_norms.first().copied().unwrap_or(0.0);
        self.residual_norms
            .iter()
            .map(|r| if r0 > 0.0 { r / r0 } else { 0.0 })
            .collect()
    }

    /// Normalized residuals as the columns of a matrix.
    pub fn residual_matrix(&self) -> DMatrix<f64> {
        let n = self.normalized_residuals.first().map_or(0, Vec::len);
        crate::linalg::from_columns(n, &self.normalized_residuals)
    }
}

fn finite(iteration: usize, x: f64) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFiniteScalar { iteration })
    }
}

/// Evaluates the quadratic cost at an iterate.
pub type CostFn<'a> = &'a dyn Fn(&[f64]) -> f64;

/// Split-preconditioned CG for `A x = b` with `P = C C^T`.
///
/// Works on `C^T A C x^ = C^T b` without forming the preconditioned operator:
/// one application of `A` per iteration, reused between the step length and the
/// residual update. The convergence test is on the preconditioned residual,
/// `||r_j|| <= rel_tol ||r_0||`.
///
/// Without `cost_eval` the recorded cost is the energy `x^T A x / 2 - b^T x`,
/// tracked through the stored products so it needs no extra applications.
pub fn pcg_split<O, P>(
    op: &O,
    b: &[f64],
    precond: &P,
    x0: Option<&[f64]>,
    opts: &PcgOptions,
    cost_eval: Option<CostFn<'_>>,
) -> Result<(Vec<f64>, CgHistory)>
where
    O: LinearOperator + ?Sized,
    P: SplitPreconditioner + ?Sized,
{
    let n = op.dim();
    check_len("right-hand side", n, b.len())?;
    let mut applies = 0;
    let (mut x, mut ax) = match x0 {
        Some(x0) => {
            check_len("initial guess", n, x0.len())?;
            applies += 1;
            (x0.to_vec(), op.apply(x0)?)
        }
        None => (vec![0.0; n], vec![0.0; n]),
    };
    let resid: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut r = precond.apply_t(&resid)?;
    let mut p = precond.apply(&r)?;
    let mut rr = dot(&r, &r);
    let r0 = finite(0, rr.sqrt())?;

    let energy = |x: &[f64], ax: &[f64]| 0.5 * dot(x, ax) - dot(b, x);
    let cost = |x: &[f64], ax: &[f64]| match cost_eval {
        Some(f) => f(x),
        None => energy(x, ax),
    };

    let mut hist = CgHistory {
        alphas: Vec::new(),
        betas: Vec::new(),
        residual_norms: vec![r0],
        normalized_residuals: Vec::new(),
        quadratic_cost: vec![cost(&x, &ax)],
        iterations: 0,
        converged: false,
        reason: StopReason::MaxIterations,
        operator_applies: applies,
    };
    let keep = opts.keep_residuals || opts.reorthogonalize;
    if r0 == 0.0 {
        hist.converged = true;
        hist.reason = StopReason::ZeroResidual;
        return Ok((x, hist));
    }
    if keep {
        hist.normalized_residuals.push(r.iter().map(|v| v / r0).collect());
    }

    for j in 1..=opts.max_iter {
        let ap = op.apply(&p)?;
        hist.operator_applies += 1;
        let curvature = finite(j, dot(&p, &ap))?;
        if curvature <= 0.0 {
            return Err(Error::Breakdown {
                iteration: j,
                curvature,
            });
        }
        let alpha = finite(j, rr / curvature)?;
        axpy(alpha, &p, &mut x);
        axpy(alpha, &ap, &mut ax);
        let cap = precond.apply_t(&ap)?;
        axpy(-alpha, &cap, &mut r);
        if opts.reorthogonalize {
            for f in &hist.normalized_residuals {
                let c = dot(f, &r);
                axpy(-c, f, &mut r);
            }
        }
        let rr_new = dot(&r, &r);
        let beta = finite(j, rr_new / rr)?;
        let rnorm = rr_new.sqrt();
        rr = rr_new;

        hist.alphas.push(alpha);
        hist.betas.push(beta);
        hist.residual_norms.push(rnorm);
        hist.quadratic_cost.push(cost(&x, &ax));
        hist.iterations = j;
        if keep && rnorm > 0.0 {
            hist.normalized_residuals.push(r.iter().map(|v| v / rnorm).collect());
        }
        if rnorm <= opts.rel_tol * r0 {
            hist.converged = true;
            hist.reason = StopReason::Tolerance;
            break;
        }
        let cr = precond.apply(&r)?;
        for (pi, ci) in p.iter_mut().zip(&cr) {
            *pi = ci + beta * *pi;
        }
    }
    Ok((x, hist))
}

/// Symmetric tridiagonal matrix with diagonal `gammas` and off-diagonal `taus`.
#[derive(Debug, Clone, PartialEq)]
pub struct TridiagonalMatrix {
    pub gammas: Vec<f64>,
    pub taus: Vec<f64>,
}

impl TridiagonalMatrix {
    pub fn dim(&self) -> usize {
        self.gammas.len()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let j = self.dim();
        let mut t = DMatrix::zeros(j, j);
        for i in 0..j {
            t[(i, i)] = self.gammas[i];
            if i + 1 < j {
                t[(i, i + 1)] = self.taus[i];
                t[(i + 1, i)] = self.taus[i];
            }
        }
        t
    }

    /// Eigenvalues in decreasing order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        sorted_symmetric_eigen(&self.to_dense()).0
    }
}

/// Lanczos tridiagonal matrix recovered from the CG coefficients:
/// `gamma_1 = 1/alpha_1`, `gamma_j = 1/alpha_j + beta_{j-1}/alpha_{j-1}`,
/// `tau_j = sqrt(beta_j)/alpha_j`.
pub fn tridiagonal_from_cg(history: &CgHistory) -> Result<TridiagonalMatrix> {
    let j = history.alphas.len();
    if j == 0 {
        return Err(Error::EmptyHistory);
    }
    let a = &history.alphas;
    let b = &history.betas;
    let gammas = (0..j)
        .map(|i| {
            if i == 0 {
                1.0 / a[0]
            } else {
                1.0 / a[i] + b[i - 1] / a[i - 1]
            }
        })
        .collect();
    let taus = (0..j - 1).map(|i| b[i].sqrt() / a[i]).collect();
    Ok(TridiagonalMatrix { gammas, taus })
}

/// Leading `k` Ritz pairs `u_i = F w_i` from the tridiagonal matrix and the
/// normalized CG residuals `F = (f_0, ..., f_{j-1})`.
///
/// CG residuals alternate in sign relative to the Lanczos vectors, so column
/// `i` of `F` enters with sign `(-1)^i`. Ritz values within
/// [`GHOST_TOL`]` * theta_max` of an already accepted value are dropped as
/// ghosts, so fewer than `k` pairs may come back.
pub fn ritz_from_tridiagonal(t: &TridiagonalMatrix, f: &DMatrix<f64>, k: usize) -> Result<RitzPairs> {
    let j = t.dim();
    if k > j {
        return Err(Error::TooManyPairs {
            requested: k,
            available: j,
        });
    }
    if f.ncols() < j {
        return Err(Error::DimensionMismatch {
            context: "stored normalized residuals",
            expected: j,
            actual: f.ncols(),
        });
    }
    let (values, w) = sorted_symmetric_eigen(&t.to_dense());
    let theta_max = values.first().copied().unwrap_or(0.0).abs();
    let mut keep: Vec<usize> = Vec::with_capacity(k);
    for (i, &v) in values.iter().enumerate() {
        if keep.len() == k {
            break;
        }
        let ghost = keep
            .iter()
            .any(|&o| (values[o] - v).abs() <= GHOST_TOL * theta_max);
        if !ghost {
            keep.push(i);
        }
    }
    let mut lanczos = f.columns(0, j).into_owned();
    for c in (1..j).step_by(2) {
        lanczos.column_mut(c).neg_mut();
    }
    let mut w_k = DMatrix::zeros(j, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        w_k.set_column(c, &w.column(i));
    }
    let vectors = lanczos * w_k;
    let vals = keep.iter().map(|&i| values[i]).collect();
    RitzPairs::new(vectors, vals, RitzSource::Lanczos)
}
