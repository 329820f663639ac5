//! Matrix-free first-level-preconditioned Hessian
//! `A = I + D^{1/2} L^{-T} H^T R^{-1} H L^{-1} D^{1/2}` and its pieces.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};

use crate::covariance::BlockCovariance;
use crate::error::{check_finite, check_len, Error, Result};
use crate::exec::Execution;
use crate::linalg::{orthonormalize, symmetric_eigenvalues};
use crate::lmp::{LmpFactor, SplitPreconditioner};
use crate::models::{Dynamics, ObservationNetwork};
use crate::ritz::{RitzPairs, RitzSource};
pub use crate::state::StateVector;

/// Default bound on the dimension of operators that may be assembled densely.
pub const DEFAULT_DENSE_CAP: usize = 4096;

/// A square linear map applied to vectors.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>>;
}

impl<T: LinearOperator + ?Sized> LinearOperator for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        (**self).apply(x)
    }
}

/// An explicit dense matrix as an operator.
#[derive(Debug, Clone)]
pub struct DenseOperator(pub DMatrix<f64>);

impl LinearOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("dense operator", self.0.ncols(), x.len())?;
        Ok((&self.0 * DVector::from_column_slice(x)).iter().copied().collect())
    }
}

/// Wraps an operator and counts operator-vector products.
pub struct CountingOperator<O> {
    inner: O,
    count: AtomicUsize,
}

impl<O: LinearOperator> CountingOperator<O> {
    pub fn new(inner: O) -> Self {
        Self {
            inner,
            count: AtomicUsize::new(0),
        }
    }

    pub fn count(&self) -> usize {
        self.count.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.count.store(0, Ordering::SeqCst);
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }
}

impl<O: LinearOperator> LinearOperator for CountingOperator<O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.count.fetch_add(1, Ordering::SeqCst);
        self.inner.apply(x)
    }
}

/// `C^T A C` for a split preconditioner `P = C C^T`.
pub struct Preconditioned<'a, O: ?Sized, P: ?Sized> {
    pub op: &'a O,
    pub precond: &'a P,
}

impl<O: LinearOperator + ?Sized, P: SplitPreconditioner + ?Sized> LinearOperator for Preconditioned<'_, O, P> {
    fn dim(&self) -> usize {
        self.op.dim()
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let cx = self.precond.apply(x)?;
        let acx = self.op.apply(&cx)?;
        self.precond.apply_t(&acx)
    }
}

/// Applies `op` to every column of `v`.
///
/// Columns are independent and may run on worker threads; results are placed
/// by column index, so serial and parallel execution agree bitwise.
pub fn apply_block<O: LinearOperator + ?Sized>(
    op: &O,
    v: &DMatrix<f64>,
    exec: Execution,
) -> Result<DMatrix<f64>> {
    check_len("block operator input", op.dim(), v.nrows())?;
    let cols = exec.try_map(v.ncols(), |j| op.apply(v.column(j).as_slice()))?;
    let mut out = DMatrix::zeros(v.nrows(), v.ncols());
    for (j, c) in cols.iter().enumerate() {
        out.set_column(j, &DVector::from_column_slice(c));
    }
    Ok(out)
}

/// Assembles `op` column by column as `op e_j`.
pub fn assemble_dense<O: LinearOperator + ?Sized>(
    op: &O,
    cap: usize,
    exec: Execution,
) -> Result<DMatrix<f64>> {
    let dim = op.dim();
    if dim > cap {
        return Err(Error::DenseCapExceeded { dim, cap });
    }
    apply_block(op, &DMatrix::identity(dim, dim), exec)
}

/// Forward substitution through the block unit-lower-triangular `L`:
/// `x_0 = p_0`, `x_{i+1} = M_i x_i + p_{i+1}`.
pub fn apply_linv<M: Dynamics + ?Sized>(
    model: &M,
    trajectory: &StateVector,
    p: &[f64],
) -> Result<StateVector> {
    check_len("L^-1 input", trajectory.len(), p.len())?;
    let n = trajectory.n();
    let blocks = trajectory.num_blocks();
    let mut out = StateVector::zeros(n, blocks);
    out.block_mut(0).copy_from_slice(&p[..n]);
    for i in 0..blocks - 1 {
        let mut next = model.tlm_step(trajectory.block(i), out.block(i))?;
        for (x, pi) in next.iter_mut().zip(&p[(i + 1) * n..(i + 2) * n]) {
            *x += pi;
        }
        out.block_mut(i + 1).copy_from_slice(&next);
    }
    check_finite("tangent-linear sweep", out.as_slice())?;
    Ok(out)
}

/// Transpose of [`apply_linv`]: reverse sweep `y_N = v_N`,
/// `y_i = v_i + M_i^T y_{i+1}`.
pub fn apply_linv_t<M: Dynamics + ?Sized>(
    model: &M,
    trajectory: &StateVector,
    v: &[f64],
) -> Result<StateVector> {
    check_len("L^-T input", trajectory.len(), v.len())?;
    let n = trajectory.n();
    let blocks = trajectory.num_blocks();
    let mut out = StateVector::zeros(n, blocks);
    let last = blocks - 1;
    out.block_mut(last).copy_from_slice(&v[last * n..]);
    for i in (0..last).rev() {
        let mut prev = model.adjoint_step(trajectory.block(i), out.block(i + 1))?;
        for (y, vi) in prev.iter_mut().zip(&v[i * n..(i + 1) * n]) {
            *y += vi;
        }
        out.block_mut(i).copy_from_slice(&prev);
    }
    check_finite("adjoint sweep", out.as_slice())?;
    Ok(out)
}

/// The first-level-preconditioned Hessian of the incremental cost at a fixed
/// linearization trajectory.
///
/// The trajectory is captured at construction; relinearizing means building a
/// new operator.
#[derive(Debug, Clone)]
pub struct HessianOperator<M> {
    model: M,
    trajectory: StateVector,
    network: ObservationNetwork,
    d_half: BlockCovariance,
    r_inv: Vec<f64>,
}

impl<M: Dynamics> HessianOperator<M> {
    pub fn new(
        model: M,
        trajectory: StateVector,
        network: ObservationNetwork,
        d_half: BlockCovariance,
        r_inv: Vec<f64>,
    ) -> Result<Self> {
        let grid = *model.grid();
        check_len("linearization trajectory", grid.window_len(), trajectory.len())?;
        check_len("trajectory block size", grid.n, trajectory.n())?;
        check_len("control covariance", grid.window_len(), d_half.dim())?;
        check_len("observation error variances", network.total(), r_inv.len())?;
        if r_inv.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::InvalidParameter(
                "inverse observation variances must be positive".into(),
            ));
        }
        Ok(Self {
            model,
            trajectory,
            network,
            d_half,
            r_inv,
        })
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn trajectory(&self) -> &StateVector {
        &self.trajectory
    }

    pub fn network(&self) -> &ObservationNetwork {
        &self.network
    }

    pub fn d_half(&self) -> &BlockCovariance {
        &self.d_half
    }

    pub fn r_inv(&self) -> &[f64] {
        &self.r_inv
    }

    pub fn apply_linv(&self, p: &[f64]) -> Result<StateVector> {
        apply_linv(&self.model, &self.trajectory, p)
    }

    pub fn apply_linv_t(&self, v: &[f64]) -> Result<StateVector> {
        apply_linv_t(&self.model, &self.trajectory, v)
    }

    /// `H L^{-1} D^{1/2} v`
    pub fn forward(&self, v: &[f64]) -> Result<Vec<f64>> {
        let dp = self.d_half.apply_half(v)?;
        let x = self.apply_linv(&dp)?;
        self.network.observe(x.as_slice())
    }

    /// `D^{1/2} L^{-T} H^T w`
    pub fn backward(&self, w: &[f64]) -> Result<Vec<f64>> {
        let scattered = self.network.observe_adjoint(w)?;
        let lam = self.apply_linv_t(scattered.as_slice())?;
        let out = self.d_half.apply_half(lam.as_slice())?;
        check_finite("covariance square root", &out)?;
        Ok(out)
    }

    /// `v + D^{1/2} L^{-T} H^T R^{-1} H L^{-1} D^{1/2} v`
    pub fn apply_hessian(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("Hessian input", self.dim(), v.len())?;
        let mut y = self.forward(v)?;
        for (yi, ri) in y.iter_mut().zip(&self.r_inv) {
            *yi *= ri;
        }
        let mut out = self.backward(&y)?;
        for (o, vi) in out.iter_mut().zip(v) {
            *o += vi;
        }
        Ok(out)
    }

    pub fn apply_hessian_block(&self, v: &DMatrix<f64>, exec: Execution) -> Result<DMatrix<f64>> {
        apply_block(self, v, exec)
    }

    /// Right-hand side `D^{-1/2} b + D^{1/2} L^{-T} H^T R^{-1} d`.
    pub fn rhs(&self, b: &[f64], d: &[f64]) -> Result<Vec<f64>> {
        check_len("innovation d", self.network.total(), d.len())?;
        let weighted: Vec<f64> = d.iter().zip(&self.r_inv).map(|(a, r)| a * r).collect();
        let mut out = self.backward(&weighted)?;
        let bt = self.d_half.apply_inv_half(b)?;
        for (o, x) in out.iter_mut().zip(&bt) {
            *o += x;
        }
        Ok(out)
    }

    /// The factor `W = D^{1/2} L^{-T} H^T R^{-1/2}` with `A = I + W W^T`.
    ///
    /// Costs one adjoint sweep per observation.
    pub fn observation_factor(&self, exec: Execution) -> Result<DMatrix<f64>> {
        let q = self.network.total();
        let cols = exec.try_map(q, |j| {
            let mut e = vec![0.0; q];
            e[j] = self.r_inv[j].sqrt();
            self.backward(&e)
        })?;
        let mut w = DMatrix::zeros(self.dim(), q);
        for (j, c) in cols.iter().enumerate() {
            w.set_column(j, &DVector::from_column_slice(c));
        }
        Ok(w)
    }
}

impl<M: Dynamics> LinearOperator for HessianOperator<M> {
    fn dim(&self) -> usize {
        self.trajectory.len()
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.apply_hessian(x)
    }
}

/// Exact leading eigenpairs of `I + W W^T`, from the thin SVD of `W`.
pub fn leading_eigenpairs(w: &DMatrix<f64>, k: usize) -> Result<RitzPairs> {
    let q = w.ncols();
    if k > q {
        return Err(Error::TooManyPairs {
            requested: k,
            available: q,
        });
    }
    if k == 0 {
        return Ok(RitzPairs::empty(w.nrows(), RitzSource::Exact));
    }
    let svd = w.clone().svd(true, false);
    let u = svd.u.as_ref().expect("requested U");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    order.truncate(k);
    let values = order.iter().map(|&i| 1.0 + svd.singular_values[i].powi(2)).collect();
    let vectors = DMatrix::from_fn(w.nrows(), k, |r, c| u[(r, order[c])]);
    RitzPairs::new(vectors, values, RitzSource::Exact)
}

/// Spectrum of an operator that equals the identity outside a small subspace.
///
/// `nontrivial` holds the eigenvalues on that subspace (ascending); the
/// remaining `unit_count` eigenvalues are exactly one.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedSpectrum {
    pub nontrivial: Vec<f64>,
    pub unit_count: usize,
}

impl CompressedSpectrum {
    pub fn dim(&self) -> usize {
        self.nontrivial.len() + self.unit_count
    }

    pub fn min(&self) -> f64 {
        let lo = self.nontrivial.first().copied().unwrap_or(f64::INFINITY);
        if self.unit_count > 0 {
            lo.min(1.0)
        } else {
            lo
        }
    }

    pub fn max(&self) -> f64 {
        let hi = self.nontrivial.last().copied().unwrap_or(f64::NEG_INFINITY);
        if self.unit_count > 0 {
            hi.max(1.0)
        } else {
            hi
        }
    }

    /// All eigenvalues in ascending order.
    pub fn full(&self) -> Vec<f64> {
        let mut all = self.nontrivial.clone();
        all.extend(std::iter::repeat_n(1.0, self.unit_count));
        all.sort_by(f64::total_cmp);
        all
    }
}

/// Spectrum of `C^T (I + W W^T) C` for a spectral-LMP factor `C` (identity
/// when `None`).
pub fn preconditioned_spectrum(w: &DMatrix<f64>, factor: Option<&LmpFactor>) -> Result<CompressedSpectrum> {
    LowRankHessian::new(w.clone())?.spectrum(factor)
}

/// `A = I + W W^T` together with an orthonormal basis of `span(W)`.
///
/// Both `A` and a spectral-LMP factor built from vectors `U` act as the
/// identity on the orthogonal complement of `span(W, U)`, so the spectrum of
/// the preconditioned matrix reduces exactly to that span.
#[derive(Debug, Clone)]
pub struct LowRankHessian {
    w: DMatrix<f64>,
    basis: DMatrix<f64>,
    /// `W` in basis coordinates.
    coords: DMatrix<f64>,
}

impl LowRankHessian {
    pub fn new(w: DMatrix<f64>) -> Result<Self> {
        let basis = if w.ncols() == 0 || w.amax() == 0.0 {
            DMatrix::zeros(w.nrows(), 0)
        } else {
            orthonormalize(&w)?
        };
        let coords = basis.tr_mul(&w);
        Ok(Self { w, basis, coords })
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.w
    }

    fn extended_basis(&self, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if u.ncols() == 0 {
            return Ok(self.basis.clone());
        }
        let q = &self.basis;
        let mut res = u - q * q.tr_mul(u);
        res -= q * q.tr_mul(&res);
        let keep: Vec<usize> = (0..res.ncols())
            .filter(|&j| res.column(j).norm() > 1e-8 * u.column(j).norm().max(f64::MIN_POSITIVE))
            .collect();
        if keep.is_empty() {
            return Ok(self.basis.clone());
        }
        let res = res.select_columns(&keep);
        let mut extra = orthonormalize(&res)?;
        extra -= q * q.tr_mul(&extra);
        let extra = orthonormalize(&extra)?;
        let mut out = DMatrix::zeros(q.nrows(), q.ncols() + extra.ncols());
        out.columns_mut(0, q.ncols()).copy_from(q);
        out.columns_mut(q.ncols(), extra.ncols()).copy_from(&extra);
        Ok(out)
    }

    pub fn spectrum(&self, factor: Option<&LmpFactor>) -> Result<CompressedSpectrum> {
        let n = self.dim();
        if let Some(f) = factor {
            check_len("LMP vectors", n, f.dim())?;
        }
        let basis = match factor {
            Some(f) => self.extended_basis(f.vectors())?,
            None => self.basis.clone(),
        };
        let r = basis.ncols();
        if r == 0 {
            return Ok(CompressedSpectrum {
                nontrivial: Vec::new(),
                unit_count: n,
            });
        }
        // Columns beyond span(W) are orthogonal to W, so W has zero
        // coordinates there.
        let mut w = DMatrix::zeros(r, self.w.ncols());
        w.rows_mut(0, self.coords.nrows()).copy_from(&self.coords);
        let mut c = DMatrix::identity(r, r);
        if let Some(f) = factor {
            let small = f.restricted(&basis);
            for j in 0..r {
                let y = small.apply(c.column(j).as_slice())?;
                c.set_column(j, &DVector::from_vec(y));
            }
        }
        let wc = w.tr_mul(&c);
        let projected = c.tr_mul(&c) + wc.tr_mul(&wc);
        Ok(CompressedSpectrum {
            nontrivial: symmetric_eigenvalues(&projected),
            unit_count: n - r,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{sym_sqrt, CovarianceFactor, CovarianceSpec};
    use crate::linalg::{frobenius_distance, sorted_symmetric_eigen};
    use crate::lmp::build_spectral_lmp;
    use crate::models::{integrate, AdvectionModel, Lorenz96Model, ModelGrid};

    #[derive(Clone)]
    struct IdentityModel(ModelGrid);

    impl Dynamics for IdentityModel {
        fn grid(&self) -> &ModelGrid {
            &self.0
        }
        fn step(&self, x: &[f64]) -> Result<Vec<f64>> {
            Ok(x.to_vec())
        }
        fn tlm_step(&self, _: &[f64], dx: &[f64]) -> Result<Vec<f64>> {
            Ok(dx.to_vec())
        }
        fn adjoint_step(&self, _: &[f64], l: &[f64]) -> Result<Vec<f64>> {
            Ok(l.to_vec())
        }
    }

    fn dense_model_matrix<M: Dynamics>(m: &M, x: &[f64]) -> DMatrix<f64> {
        let n = x.len();
        let mut out = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            out.set_column(j, &DVector::from_vec(m.tlm_step(x, &e).unwrap()));
        }
        out
    }

    fn block_diag(first: &DMatrix<f64>, rest: &DMatrix<f64>, blocks: usize) -> DMatrix<f64> {
        let n = first.nrows();
        let mut out = DMatrix::zeros(n * blocks, n * blocks);
        out.view_mut((0, 0), (n, n)).copy_from(first);
        for i in 1..blocks {
            out.view_mut((i * n, i * n), (n, n)).copy_from(rest);
        }
        out
    }

    /// `A`, assembled from explicit `L^{-1}`, `H`, `D^{1/2}` and `R^{-1}`.
    fn dense_hessian<M: Dynamics + Clone>(op: &HessianOperator<M>) -> DMatrix<f64> {
        let traj = op.trajectory();
        let n = traj.n();
        let blocks = traj.num_blocks();
        let dim = n * blocks;
        let mut linv = DMatrix::<f64>::identity(dim, dim);
        for i in 1..blocks {
            let m = dense_model_matrix(op.model(), traj.block(i - 1));
            for j in 0..i {
                let prev = linv.view(((i - 1) * n, j * n), (n, n)).into_owned();
                linv.view_mut((i * n, j * n), (n, n)).copy_from(&(m.clone() * prev));
            }
        }
        let q = op.network().total();
        let mut h = DMatrix::zeros(q, dim);
        for j in 0..dim {
            let mut e = vec![0.0; dim];
            e[j] = 1.0;
            h.set_column(j, &DVector::from_vec(op.network().observe(&e).unwrap()));
        }
        let d = block_diag(op.d_half().background().half(), op.d_half().model_error().half(), blocks);
        let rinv = DMatrix::from_diagonal(&DVector::from_column_slice(op.r_inv()));
        let g = &h * &linv * &d;
        DMatrix::identity(dim, dim) + g.transpose() * rinv * g
    }

    fn small_advection(n: usize, steps: usize, ss: usize, ts: usize) -> HessianOperator<AdvectionModel> {
        let grid = ModelGrid::new(n, steps, 0.8 / n as f64).unwrap();
        let model = AdvectionModel::from_grid(grid).unwrap();
        let mut p = StateVector::zeros(n, steps + 1);
        p.block_mut(0).copy_from_slice(&(0..n).map(|j| (j as f64).sin()).collect::<Vec<_>>());
        let traj = integrate(&model, &p).unwrap();
        let net = ObservationNetwork::new(n, steps, ss, ts).unwrap();
        let b = sym_sqrt(&CovarianceSpec::soar(n, 0.3, 2.0).build().unwrap()).unwrap();
        let q = sym_sqrt(&CovarianceSpec::laplacian(n, 0.1, 1.0).build().unwrap()).unwrap();
        let d = BlockCovariance::new(b, q, steps).unwrap();
        let rinv = vec![1.0 / 0.04; net.total()];
        HessianOperator::new(model, traj, net, d, rinv).unwrap()
    }

    fn small_lorenz() -> HessianOperator<Lorenz96Model> {
        let (n, steps) = (8, 6);
        let model = Lorenz96Model::new(ModelGrid::new(n, steps, 0.025).unwrap(), 8.0).unwrap();
        let mut p = StateVector::zeros(n, steps + 1);
        p.block_mut(0).copy_from_slice(&(0..n).map(|j| 8.0 + 2.0 * (j as f64 * 0.9).cos()).collect::<Vec<_>>());
        let traj = integrate(&model, &p).unwrap();
        let net = ObservationNetwork::new(n, steps, 2, 2).unwrap();
        let b = sym_sqrt(&CovarianceSpec::soar(n, 0.2, 2.0).build().unwrap()).unwrap();
        let q = sym_sqrt(&CovarianceSpec::laplacian(n, 0.1, 2.0).build().unwrap()).unwrap();
        let d = BlockCovariance::new(b, q, steps).unwrap();
        let rinv = vec![1.0 / 0.0225; net.total()];
        HessianOperator::new(model, traj, net, d, rinv).unwrap()
    }

    #[test]
    fn identity_model_linv_is_cumulative_sum() {
        let grid = ModelGrid::new(4, 3, 0.1).unwrap();
        let model = IdentityModel(grid);
        let traj = StateVector::zeros(4, 4);
        let p: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let x = apply_linv(&model, &traj, &p).unwrap();
        for j in 0..4 {
            let mut acc = 0.0;
            for i in 0..4 {
                acc += p[i * 4 + j];
                assert_eq!(x.block(i)[j], acc);
            }
        }
        let y = apply_linv_t(&model, &traj, &p).unwrap();
        for j in 0..4 {
            let mut acc = 0.0;
            for i in (0..4).rev() {
                acc += p[i * 4 + j];
                assert_eq!(y.block(i)[j], acc);
            }
        }
    }

    #[test]
    fn linv_and_transpose_are_adjoint() {
        let op = small_lorenz();
        let dim = op.dim();
        let u: Vec<f64> = (0..dim).map(|i| (i as f64 * 0.37).sin()).collect();
        let v: Vec<f64> = (0..dim).map(|i| (i as f64 * 0.71).cos()).collect();
        let lhs = crate::linalg::dot(op.apply_linv(&u).unwrap().as_slice(), &v);
        let rhs = crate::linalg::dot(&u, op.apply_linv_t(&v).unwrap().as_slice());
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn hessian_matches_dense_oracle() {
        let op = small_advection(8, 4, 2, 2);
        let a = assemble_dense(&op, 100, Execution::Serial).unwrap();
        let oracle = dense_hessian(&op);
        assert!(frobenius_distance(&a, &oracle) <= 1e-12 * oracle.norm());

        let op = small_lorenz();
        let a = assemble_dense(&op, 100, Execution::Parallel).unwrap();
        let oracle = dense_hessian(&op);
        assert!(frobenius_distance(&a, &oracle) <= 1e-11 * oracle.norm());
    }

    #[test]
    fn hessian_is_symmetric_and_bounded_below_by_one() {
        let op = small_lorenz();
        let a = assemble_dense(&op, 100, Execution::Serial).unwrap();
        assert!(frobenius_distance(&a, &a.transpose()) <= 1e-10 * a.norm());
        let eig = symmetric_eigenvalues(&a);
        assert!(eig[0] >= 1.0 - 1e-10);
        for s in 0..50 {
            let v: Vec<f64> = (0..op.dim()).map(|i| ((i * 13 + s * 7) as f64).sin()).collect();
            let av = op.apply(&v).unwrap();
            assert!(crate::linalg::dot(&v, &av) >= crate::linalg::dot(&v, &v) * (1.0 - 1e-12));
        }
    }

    #[test]
    fn unobserved_window_gives_identity() {
        let grid = ModelGrid::new(5, 3, 0.1).unwrap();
        let model = IdentityModel(grid);
        let traj = StateVector::zeros(5, 4);
        let d = BlockCovariance::new(CovarianceFactor::identity(5), CovarianceFactor::identity(5), 3).unwrap();
        let op = HessianOperator::new(model, traj, ObservationNetwork::empty(5, 3), d, vec![]).unwrap();
        let a = assemble_dense(&op, 100, Execution::Serial).unwrap();
        assert_eq!(a, DMatrix::identity(20, 20));
        let w = op.observation_factor(Execution::Serial).unwrap();
        assert_eq!(w.ncols(), 0);
        let s = preconditioned_spectrum(&w, None).unwrap();
        assert_eq!(s.unit_count, 20);
        assert_eq!((s.min(), s.max()), (1.0, 1.0));
    }

    #[test]
    fn dense_cap_is_enforced() {
        let op = DenseOperator(DMatrix::identity(10, 10));
        assert_eq!(
            assemble_dense(&op, 9, Execution::Serial).unwrap_err(),
            Error::DenseCapExceeded { dim: 10, cap: 9 }
        );
    }

    #[test]
    fn observation_factor_reproduces_hessian() {
        let op = small_advection(8, 4, 2, 2);
        let w = op.observation_factor(Execution::Parallel).unwrap();
        let a = assemble_dense(&op, 100, Execution::Serial).unwrap();
        let lr = DMatrix::identity(op.dim(), op.dim()) + &w * w.transpose();
        assert!(frobenius_distance(&a, &lr) <= 1e-12 * a.norm());
    }

    #[test]
    fn leading_pairs_match_dense_eigendecomposition() {
        let op = small_lorenz();
        let w = op.observation_factor(Execution::Serial).unwrap();
        let a = assemble_dense(&op, 100, Execution::Serial).unwrap();
        let (vals, vecs) = sorted_symmetric_eigen(&a);
        let pairs = leading_eigenpairs(&w, 4).unwrap();
        for i in 0..4 {
            assert!((pairs.values[i] - vals[i]).abs() <= 1e-9 * vals[0]);
            let dotp = pairs.vectors.column(i).dot(&vecs.column(i)).abs();
            assert!((dotp - 1.0).abs() < 1e-8);
        }
        assert!(matches!(leading_eigenpairs(&w, w.ncols() + 1), Err(Error::TooManyPairs { .. })));
    }

    #[test]
    fn compressed_spectrum_matches_dense() {
        let op = small_lorenz();
        let w = op.observation_factor(Execution::Serial).unwrap();
        let a = assemble_dense(&op, 100, Execution::Serial).unwrap();
        let dense = symmetric_eigenvalues(&a);
        let plain = preconditioned_spectrum(&w, None).unwrap().full();
        for (x, y) in plain.iter().zip(&dense) {
            assert!((x - y).abs() <= 1e-9 * dense[dense.len() - 1]);
        }

        // An LMP from perturbed vectors leaves span(W), exercising the
        // extended basis.
        let mut pairs = leading_eigenpairs(&w, 3).unwrap();
        for (i, v) in pairs.vectors.iter_mut().enumerate() {
            *v += 1e-2 * ((i * 31) as f64).sin();
        }
        pairs.vectors = orthonormalize(&pairs.vectors).unwrap();
        let factor = build_spectral_lmp(&pairs).unwrap();
        // C^T A C = C^T (C^T A)^T for symmetric A.
        let apply_t_cols = |m: &DMatrix<f64>| {
            let mut out = m.clone();
            for j in 0..m.ncols() {
                let c = factor.apply_t(m.column(j).as_slice()).unwrap();
                out.set_column(j, &DVector::from_vec(c));
            }
            out
        };
        let full = apply_t_cols(&apply_t_cols(&a).transpose());
        let dense = symmetric_eigenvalues(&full);
        let compressed = preconditioned_spectrum(&w, Some(&factor)).unwrap().full();
        assert_eq!(compressed.len(), dense.len());
        for (x, y) in compressed.iter().zip(&dense) {
            assert!((x - y).abs() <= 1e-8 * dense[dense.len() - 1], "{x} vs {y}");
        }
    }
}
