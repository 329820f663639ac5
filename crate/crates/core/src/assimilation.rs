//! Twin experiments and the incremental outer/inner loop of the forcing
//! formulation.

use std::sync::OnceLock;

use nalgebra::DMatrix;

use crate::covariance::{sample_noise, sym_sqrt, BlockCovariance, CovarianceFactor, CovarianceSpec};
use crate::error::{check_finite, check_len, Error, Result};
use crate::exec::Execution;
use crate::krylov::{pcg_split, PcgOptions};
use crate::linalg::dot;
use crate::lmp::{build_spectral_lmp, LmpFactor};
use crate::models::{free_run, integrate, Dynamics, Lorenz96Model, ModelGrid};
use crate::models::ObservationNetwork;
use crate::operators::{leading_eigenpairs, HessianOperator, LowRankHessian};
use crate::randevd::{sketch, SketchConfig};
use crate::ritz::{RitzPairs, RitzSource};
use crate::state::StateVector;

/// Everything that defines the variational problem apart from the data.
#[derive(Debug, Clone)]
pub struct Problem<M> {
    model: M,
    network: ObservationNetwork,
    background: CovarianceFactor,
    model_error: CovarianceFactor,
    covariance: BlockCovariance,
    sigma_obs: f64,
}

impl<M: Dynamics + Clone> Problem<M> {
    pub fn new(
        model: M,
        network: ObservationNetwork,
        background: &CovarianceSpec,
        model_error: &CovarianceSpec,
        sigma_obs: f64,
    ) -> Result<Self> {
        let b = sym_sqrt(&background.build()?)?;
        let q = sym_sqrt(&model_error.build()?)?;
        Self::from_factors(model, network, b, q, sigma_obs)
    }

    pub fn from_factors(
        model: M,
        network: ObservationNetwork,
        background: CovarianceFactor,
        model_error: CovarianceFactor,
        sigma_obs: f64,
    ) -> Result<Self> {
        let grid = *model.grid();
        check_len("background covariance", grid.n, background.dim())?;
        if !(sigma_obs > 0.0 && sigma_obs.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "observation error std must be positive, got {sigma_obs}"
            )));
        }
        let covariance = BlockCovariance::new(background.clone(), model_error.clone(), grid.steps)?;
        Ok(Self {
            model,
            network,
            background,
            model_error,
            covariance,
            sigma_obs,
        })
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn grid(&self) -> &ModelGrid {
        self.model.grid()
    }

    pub fn network(&self) -> &ObservationNetwork {
        &self.network
    }

    pub fn covariance(&self) -> &BlockCovariance {
        &self.covariance
    }

    pub fn sigma_obs(&self) -> f64 {
        self.sigma_obs
    }

    /// Size of the control vector, `n (N + 1)`.
    pub fn dim(&self) -> usize {
        self.grid().window_len()
    }

    /// Diagonal of `R^{-1}`.
    pub fn r_inv(&self) -> Vec<f64> {
        vec![1.0 / (self.sigma_obs * self.sigma_obs); self.network.total()]
    }

    /// Hessian linearized about `trajectory`.
    pub fn hessian(&self, trajectory: &StateVector) -> Result<HessianOperator<M>> {
        HessianOperator::new(
            self.model.clone(),
            trajectory.clone(),
            self.network.clone(),
            self.covariance.clone(),
            self.r_inv(),
        )
    }
}

/// `u(z, 0) = 6 exp(-(z - 0.5)^2 / (2 * 0.1^2))` at `z_j = j / n`.
pub fn gaussian_bump(n: usize) -> Vec<f64> {
    (0..n)
        .map(|j| {
            let z = j as f64 / n as f64;
            6.0 * (-(z - 0.5).powi(2) / (2.0 * 0.1 * 0.1)).exp()
        })
        .collect()
}

/// State on the Lorenz 96 attractor: `x = F` with the first component nudged
/// by `perturbation`, integrated for `steps` steps.
pub fn lorenz96_spinup(model: &Lorenz96Model, perturbation: f64, steps: usize) -> Result<Vec<f64>> {
    let mut x = vec![model.forcing(); model.grid().n];
    x[0] += perturbation;
    let states = free_run(model, &x, steps)?;
    Ok(states.into_iter().last().expect("at least the initial state"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TwinSeeds {
    pub background: u64,
    pub observations: u64,
    pub model_error: u64,
}

impl Default for TwinSeeds {
    fn default() -> Self {
        Self {
            background: 1,
            observations: 2,
            model_error: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwinOptions {
    pub seeds: TwinSeeds,
    /// Multiplies every noise draw; zero gives noise-free data.
    pub noise_scale: f64,
    /// Force the truth with model-error draws from `Q`.
    pub truth_model_error: bool,
}

impl Default for TwinOptions {
    fn default() -> Self {
        Self {
            seeds: TwinSeeds::default(),
            noise_scale: 1.0,
            truth_model_error: false,
        }
    }
}

/// Synthetic truth, background and observations.
#[derive(Debug, Clone, PartialEq)]
pub struct TwinData {
    pub truth: StateVector,
    pub background: Vec<f64>,
    /// Stacked by observation time, as in [`ObservationNetwork::observe`].
    pub observations: Vec<f64>,
    pub seeds: TwinSeeds,
}

fn obs_seed(base: u64, t: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(t as u64)
}

/// Integrates the truth from `initial` and perturbs it into a background and
/// observations.
pub fn generate_twin<M: Dynamics + Clone>(
    problem: &Problem<M>,
    initial: &[f64],
    options: &TwinOptions,
) -> Result<TwinData> {
    let grid = *problem.grid();
    check_len("truth initial state", grid.n, initial.len())?;
    let scale = options.noise_scale;
    let mut forcing = StateVector::zeros(grid.n, grid.steps + 1);
    forcing.block_mut(0).copy_from_slice(initial);
    if options.truth_model_error {
        for i in 1..=grid.steps {
            let eta = sample_noise(&problem.model_error, obs_seed(options.seeds.model_error, i));
            for (f, e) in forcing.block_mut(i).iter_mut().zip(eta) {
                *f = scale * e;
            }
        }
    }
    let truth = integrate(&problem.model, &forcing)?;
    if !truth.is_finite() {
        return Err(Error::NonFinite { stage: "truth integration" });
    }

    let bg_noise = sample_noise(&problem.background, options.seeds.background);
    let background: Vec<f64> = truth
        .block(0)
        .iter()
        .zip(&bg_noise)
        .map(|(x, e)| x + scale * e)
        .collect();

    let clean = problem.network.observe(truth.as_slice())?;
    let obs_noise = sample_noise(
        &CovarianceFactor::identity(clean.len()),
        options.seeds.observations,
    );
    let observations = clean
        .iter()
        .zip(&obs_noise)
        .map(|(y, e)| y + scale * problem.sigma_obs * e)
        .collect();
    Ok(TwinData {
        truth,
        background,
        observations,
        seeds: options.seeds,
    })
}

/// Current outer-loop iterate `p = (x_0, eta_1, ..., eta_N)` and its trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterState {
    pub p: StateVector,
    pub trajectory: StateVector,
    pub loop_index: usize,
}

impl OuterState {
    pub fn from_control<M: Dynamics + Clone>(problem: &Problem<M>, p: StateVector, loop_index: usize) -> Result<Self> {
        let trajectory = integrate(problem.model(), &p)?;
        Ok(Self {
            p,
            trajectory,
            loop_index,
        })
    }

    /// First guess `p = (x^b, 0, ..., 0)`.
    pub fn initial<M: Dynamics + Clone>(problem: &Problem<M>, twin: &TwinData) -> Result<Self> {
        let grid = *problem.grid();
        let mut p = StateVector::zeros(grid.n, grid.steps + 1);
        p.block_mut(0).copy_from_slice(&twin.background);
        Self::from_control(problem, p, 0)
    }

    /// Largest deviation between the stored trajectory and a fresh integration.
    pub fn consistency_error<M: Dynamics + Clone>(&self, problem: &Problem<M>) -> Result<f64> {
        let fresh = integrate(problem.model(), &self.p)?;
        Ok(fresh
            .as_slice()
            .iter()
            .zip(self.trajectory.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

/// `b = (x^b - x_0, -eta_1, ..., -eta_N)` and `d_i = y_i - H_i(x_i)`.
pub fn compute_innovations<M: Dynamics + Clone>(
    problem: &Problem<M>,
    state: &OuterState,
    twin: &TwinData,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len("twin observations", problem.network.total(), twin.observations.len())?;
    let n = problem.grid().n;
    let mut b: Vec<f64> = state.p.as_slice().iter().map(|v| -v).collect();
    for (bi, xb) in b[..n].iter_mut().zip(&twin.background) {
        *bi += xb;
    }
    let hx = problem.network.observe(state.trajectory.as_slice())?;
    let d = twin.observations.iter().zip(&hx).map(|(y, h)| y - h).collect();
    Ok((b, d))
}

/// Nonlinear weak-constraint cost
/// `||x_0 - x^b||^2_{B^-1} / 2 + sum ||eta_i||^2_{Q^-1} / 2 + sum ||y_i - H_i x_i||^2_{R^-1} / 2`.
///
/// Its gradient with respect to `p` is `-D^{-1/2}` times the inner-loop
/// right-hand side at `dp = 0`.
pub fn nonlinear_cost<M: Dynamics + Clone>(problem: &Problem<M>, state: &OuterState, twin: &TwinData) -> Result<f64> {
    let (b, d) = compute_innovations(problem, state, twin)?;
    let bt = problem.covariance.apply_inv_half(&b)?;
    let r_inv = 1.0 / (problem.sigma_obs * problem.sigma_obs);
    Ok(0.5 * dot(&bt, &bt) + 0.5 * r_inv * dot(&d, &d))
}

/// Second-level preconditioner for one inner loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PrecondSpec {
    None,
    /// Exact leading eigenpairs of the previous inner loop's Hessian.
    Deterministic { rank: usize },
    /// Randomized eigenpair estimates of the current Hessian.
    Randomized(SketchConfig),
}

impl PrecondSpec {
    pub fn label(&self) -> String {
        match self {
            PrecondSpec::None => "none".into(),
            PrecondSpec::Deterministic { rank } => format!("deterministic_k{rank}"),
            PrecondSpec::Randomized(cfg) => {
                format!("{}_k{}_l{}", cfg.method.name(), cfg.rank, cfg.oversampling)
            }
        }
    }
}

/// Outcome of one preconditioned inner-loop solve.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerLoopReport {
    pub spec: PrecondSpec,
    /// Increment in control space, `dp = D^{1/2} dp~`.
    pub increment: StateVector,
    /// Increment in first-level-preconditioned variables.
    pub increment_tilde: Vec<f64>,
    /// Quadratic cost at PCG iterations `0..=iterations`.
    pub cost: Vec<f64>,
    pub relative_residuals: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Eigenvalue estimates the preconditioner was built from.
    pub ritz_values: Vec<f64>,
    /// `(lambda_min, lambda_max)` of `C^T A C`, when requested.
    pub preconditioned_extremes: Option<(f64, f64)>,
    /// Hessian applications spent building the preconditioner.
    pub setup_applies: usize,
    /// Hessian applications spent in PCG.
    pub solve_applies: usize,
}

/// The quadratic subproblem of one outer iteration.
///
/// Built once per linearization; any number of preconditioned solves can then
/// share the Hessian, right-hand side and cached low-rank factor.
pub struct InnerLoop<M> {
    hessian: HessianOperator<M>,
    b: Vec<f64>,
    d: Vec<f64>,
    rhs: Vec<f64>,
    cost_offset: f64,
    factor: OnceLock<DMatrix<f64>>,
    low_rank: OnceLock<LowRankHessian>,
}

impl<M: Dynamics + Clone> InnerLoop<M> {
    pub fn new(problem: &Problem<M>, state: &OuterState, twin: &TwinData) -> Result<Self> {
        let hessian = problem.hessian(&state.trajectory)?;
        let (b, d) = compute_innovations(problem, state, twin)?;
        let rhs = hessian.rhs(&b, &d)?;
        let bt = problem.covariance.apply_inv_half(&b)?;
        let cost_offset = 0.5 * dot(&bt, &bt)
            + 0.5 * d.iter().zip(hessian.r_inv()).map(|(x, r)| x * x * r).sum::<f64>();
        Ok(Self {
            hessian,
            b,
            d,
            rhs,
            cost_offset,
            factor: OnceLock::new(),
            low_rank: OnceLock::new(),
        })
    }

    pub fn hessian(&self) -> &HessianOperator<M> {
        &self.hessian
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    /// `D^{-1/2} b + D^{1/2} L^{-T} H^T R^{-1} d`
    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    /// Cost at `dp~ = 0`.
    pub fn cost_offset(&self) -> f64 {
        self.cost_offset
    }

    /// `W` with `A = I + W W^T`, computed on first use.
    pub fn observation_factor(&self, exec: Execution) -> Result<&DMatrix<f64>> {
        if let Some(w) = self.factor.get() {
            return Ok(w);
        }
        let w = self.hessian.observation_factor(exec)?;
        let _ = self.factor.set(w);
        Ok(self.factor.get().expect("just set"))
    }

    /// `W` with a cached orthonormal basis of its range, for exact spectra of
    /// preconditioned Hessians.
    pub fn low_rank(&self, exec: Execution) -> Result<&LowRankHessian> {
        if let Some(l) = self.low_rank.get() {
            return Ok(l);
        }
        let l = LowRankHessian::new(self.observation_factor(exec)?.clone())?;
        let _ = self.low_rank.set(l);
        Ok(self.low_rank.get().expect("just set"))
    }

    /// Direct evaluation of
    /// `||dp - b||^2_{D^-1} / 2 + ||H L^-1 dp - d||^2_{R^-1} / 2`
    /// at `dp = D^{1/2} dp~`.
    pub fn quadratic_cost(&self, dp_tilde: &[f64]) -> Result<f64> {
        let d_half = self.hessian.d_half();
        let dp = d_half.apply_half(dp_tilde)?;
        let diff: Vec<f64> = dp.iter().zip(&self.b).map(|(x, b)| x - b).collect();
        let whitened = d_half.apply_inv_half(&diff)?;
        let obs = self.hessian.network().observe(self.hessian.apply_linv(&dp)?.as_slice())?;
        let misfit: f64 = obs
            .iter()
            .zip(&self.d)
            .zip(self.hessian.r_inv())
            .map(|((h, d), r)| (h - d).powi(2) * r)
            .sum();
        Ok(0.5 * dot(&whitened, &whitened) + 0.5 * misfit)
    }

    /// Eigenpair estimates for a preconditioner spec.
    pub fn ritz_pairs(&self, spec: &PrecondSpec, previous: Option<&InnerLoop<M>>, exec: Execution) -> Result<RitzPairs> {
        match spec {
            PrecondSpec::None => Ok(RitzPairs::empty(self.hessian.trajectory().len(), RitzSource::Exact)),
            PrecondSpec::Deterministic { rank } => {
                let prev = previous.ok_or(Error::NoPreviousLoop)?;
                leading_eigenpairs(prev.observation_factor(exec)?, *rank)
            }
            PrecondSpec::Randomized(cfg) => sketch(&self.hessian, cfg, exec),
        }
    }

    /// Builds the preconditioner, solves with PCG and maps the solution back to
    /// control space.
    pub fn solve(
        &self,
        spec: &PrecondSpec,
        solver: &PcgOptions,
        previous: Option<&InnerLoop<M>>,
        exec: Execution,
        with_spectrum: bool,
    ) -> Result<InnerLoopReport> {
        let counting = crate::operators::CountingOperator::new(&self.hessian);
        let pairs = match spec {
            // A rank-0 preconditioner is the identity whatever its source.
            PrecondSpec::Randomized(SketchConfig { rank: 0, .. }) | PrecondSpec::Deterministic { rank: 0 } => {
                RitzPairs::empty(self.rhs.len(), RitzSource::Exact)
            }
            PrecondSpec::Randomized(cfg) => sketch(&counting, cfg, exec)?,
            _ => self.ritz_pairs(spec, previous, exec)?,
        };
        let setup_applies = counting.count();
        let factor = if pairs.is_empty() {
            LmpFactor::identity(self.rhs.len())
        } else {
            build_spectral_lmp(&pairs)?
        };
        let (x, hist) = pcg_split(&self.hessian, &self.rhs, &factor, None, solver, None)?;
        check_finite("inner-loop solution", &x)?;
        let increment = StateVector::from_vec(
            self.hessian.trajectory().n(),
            self.hessian.d_half().apply_half(&x)?,
        )?;
        let preconditioned_extremes = if with_spectrum {
            let spec = self.low_rank(exec)?.spectrum((factor.rank() > 0).then_some(&factor))?;
            Some((spec.min(), spec.max()))
        } else {
            None
        };
        Ok(InnerLoopReport {
            spec: *spec,
            increment,
            increment_tilde: x,
            cost: hist.quadratic_cost.iter().map(|c| c + self.cost_offset).collect(),
            relative_residuals: hist.relative_residuals(),
            iterations: hist.iterations,
            converged: hist.converged,
            ritz_values: pairs.values,
            preconditioned_extremes,
            setup_applies,
            solve_applies: hist.operator_applies,
        })
    }
}

/// One inner loop at the current outer iterate.
pub fn run_inner_loop<M: Dynamics + Clone>(
    problem: &Problem<M>,
    state: &OuterState,
    twin: &TwinData,
    spec: &PrecondSpec,
    solver: &PcgOptions,
    previous: Option<&InnerLoop<M>>,
) -> Result<InnerLoopReport> {
    InnerLoop::new(problem, state, twin)?.solve(spec, solver, previous, Execution::default(), false)
}

/// `p <- p + dp`, then re-integrate the nonlinear model.
pub fn outer_update<M: Dynamics + Clone>(
    problem: &Problem<M>,
    state: &OuterState,
    report: &InnerLoopReport,
) -> Result<OuterState> {
    check_len("increment", state.p.len(), report.increment.len())?;
    let mut p = state.p.clone();
    for (pi, di) in p.as_mut_slice().iter_mut().zip(report.increment.as_slice()) {
        *pi += di;
    }
    let next = OuterState::from_control(problem, p, state.loop_index + 1)?;
    if !next.trajectory.is_finite() {
        return Err(Error::NonFinite { stage: "outer update" });
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmp::Identity;
    use crate::models::Model;
    use crate::operators::{assemble_dense, LinearOperator};
    use crate::randevd::SketchMethod;
    use crate::scenario::Scenario;

    fn tiny(model: &str) -> Scenario {
        let mut sc = match model {
            "advection" => Scenario::advection(),
            _ => Scenario::lorenz96_base(),
        };
        sc.n = 8;
        sc.steps = 4;
        sc.space_stride = 2;
        sc.time_stride = 2;
        sc.length_b = 2.0;
        sc.length_q = 1.0;
        sc.spinup_steps = 50;
        if model == "advection" {
            sc.dt = 0.1;
        }
        sc
    }

    fn setup(sc: &Scenario) -> (Problem<Model>, TwinData) {
        let problem = sc.build_problem().unwrap();
        let twin = generate_twin(&problem, &sc.initial_truth().unwrap(), &TwinOptions::default()).unwrap();
        (problem, twin)
    }

    fn tight() -> PcgOptions {
        PcgOptions {
            max_iter: 500,
            rel_tol: 1e-12,
            ..PcgOptions::default()
        }
    }

    #[test]
    fn noise_free_twin_observes_truth() {
        let sc = tiny("lorenz96");
        let problem = sc.build_problem().unwrap();
        let opts = TwinOptions {
            noise_scale: 0.0,
            ..TwinOptions::default()
        };
        let twin = generate_twin(&problem, &sc.initial_truth().unwrap(), &opts).unwrap();
        assert_eq!(twin.observations, problem.network().observe(twin.truth.as_slice()).unwrap());
        assert_eq!(twin.background, twin.truth.block(0));
    }

    #[test]
    fn advection_twin_has_100_observations() {
        let sc = Scenario::advection();
        let (problem, twin) = setup(&sc);
        assert_eq!(twin.observations.len(), 100);
        assert_eq!(problem.dim(), 2040);
        assert!(twin.observations.iter().all(|y| y.is_finite()));
    }

    #[test]
    fn twin_is_deterministic() {
        let sc = tiny("lorenz96");
        let problem = sc.build_problem().unwrap();
        let opts = TwinOptions {
            truth_model_error: true,
            ..TwinOptions::default()
        };
        let a = generate_twin(&problem, &sc.initial_truth().unwrap(), &opts).unwrap();
        let b = generate_twin(&problem, &sc.initial_truth().unwrap(), &opts).unwrap();
        assert_eq!(a, b);
        let mut other = opts;
        other.seeds.observations = 99;
        let c = generate_twin(&problem, &sc.initial_truth().unwrap(), &other).unwrap();
        assert_ne!(a.observations, c.observations);
        assert_eq!(a.background, c.background);
    }

    #[test]
    fn innovations_at_first_guess_and_truth() {
        let sc = tiny("lorenz96");
        let problem = sc.build_problem().unwrap();
        let opts = TwinOptions {
            noise_scale: 0.0,
            ..TwinOptions::default()
        };
        let twin = generate_twin(&problem, &sc.initial_truth().unwrap(), &opts).unwrap();
        let state = OuterState::initial(&problem, &twin).unwrap();
        let (b, d) = compute_innovations(&problem, &state, &twin).unwrap();
        assert!(b.iter().all(|v| *v == 0.0));
        assert!(d.iter().all(|v| v.abs() < 1e-14));

        let noisy = generate_twin(&problem, &sc.initial_truth().unwrap(), &TwinOptions::default()).unwrap();
        let mut p = state.p.clone();
        p.block_mut(1).iter_mut().for_each(|v| *v = 0.5);
        let state = OuterState::from_control(&problem, p, 0).unwrap();
        let (b, d) = compute_innovations(&problem, &state, &noisy).unwrap();
        let n = sc.n;
        for j in 0..n {
            assert_eq!(b[j], noisy.background[j] - state.p.block(0)[j]);
            assert_eq!(b[n + j], -0.5);
        }
        let hx = problem.network().observe(state.trajectory.as_slice()).unwrap();
        for (i, di) in d.iter().enumerate() {
            assert_eq!(*di, noisy.observations[i] - hx[i]);
        }
    }

    #[test]
    fn quadratic_cost_matches_operator_form() {
        let sc = tiny("lorenz96");
        let (problem, twin) = setup(&sc);
        let mut state = OuterState::initial(&problem, &twin).unwrap();
        state.p.block_mut(2)[3] = 0.3;
        let state = OuterState::from_control(&problem, state.p, 0).unwrap();
        let il = InnerLoop::new(&problem, &state, &twin).unwrap();
        assert!((il.quadratic_cost(&vec![0.0; problem.dim()]).unwrap() - il.cost_offset()).abs() < 1e-12);

        let x: Vec<f64> = (0..problem.dim()).map(|i| (i as f64 * 0.3).sin()).collect();
        let ax = il.hessian().apply(&x).unwrap();
        let form = 0.5 * dot(&x, &ax) - dot(&x, il.rhs()) + il.cost_offset();
        let direct = il.quadratic_cost(&x).unwrap();
        assert!((form - direct).abs() <= 1e-10 * direct.abs());

        // Directional derivatives against the analytic gradient A x - rhs.
        let grad: Vec<f64> = ax.iter().zip(il.rhs()).map(|(a, r)| a - r).collect();
        for s in 0..10 {
            let dir: Vec<f64> = (0..x.len()).map(|i| ((i * 7 + s * 3) as f64).cos()).collect();
            let h = 1e-4;
            let plus: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + h * d).collect();
            let minus: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a - h * d).collect();
            let fd = (il.quadratic_cost(&plus).unwrap() - il.quadratic_cost(&minus).unwrap()) / (2.0 * h);
            let an = dot(&grad, &dir);
            assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0), "{fd} vs {an}");
        }
    }

    #[test]
    fn pcg_solution_matches_dense_solve() {
        for model in ["advection", "lorenz96"] {
            let mut sc = tiny(model);
            sc.n = 4;
            sc.steps = 2;
            if model == "advection" {
                sc.dt = 0.2;
            }
            let (problem, twin) = setup(&sc);
            let state = OuterState::initial(&problem, &twin).unwrap();
            let il = InnerLoop::new(&problem, &state, &twin).unwrap();
            let report = il.solve(&PrecondSpec::None, &tight(), None, Execution::Serial, false).unwrap();
            let a = assemble_dense(il.hessian(), 100, Execution::Serial).unwrap();
            let exact = a.lu().solve(&DMatrix::from_column_slice(problem.dim(), 1, il.rhs())).unwrap();
            for (x, y) in report.increment_tilde.iter().zip(exact.iter()) {
                assert!((x - y).abs() <= 1e-8 * exact.amax());
            }
            let res: Vec<f64> = il
                .hessian()
                .apply(&report.increment_tilde)
                .unwrap()
                .iter()
                .zip(il.rhs())
                .map(|(a, r)| a - r)
                .collect();
            assert!(crate::linalg::norm(&res) <= 1e-6 * crate::linalg::norm(il.rhs()));
        }
    }

    #[test]
    fn first_level_transform_preserves_minimizer() {
        let sc = tiny("lorenz96");
        let (problem, twin) = setup(&sc);
        let state = OuterState::initial(&problem, &twin).unwrap();
        let il = InnerLoop::new(&problem, &state, &twin).unwrap();
        let report = il.solve(&PrecondSpec::None, &tight(), None, Execution::Serial, false).unwrap();

        // Unpreconditioned system S dp = D^-1 b + L^-T H^T R^-1 d with
        // S = D^-1 + L^-T H^T R^-1 H L^-1, assembled column by column.
        let h = il.hessian();
        let dim = problem.dim();
        let d_half = h.d_half();
        let apply_s = |v: &[f64]| -> Vec<f64> {
            let hx = h.network().observe(h.apply_linv(v).unwrap().as_slice()).unwrap();
            let w: Vec<f64> = hx.iter().zip(h.r_inv()).map(|(a, r)| a * r).collect();
            let back = h.apply_linv_t(h.network().observe_adjoint(&w).unwrap().as_slice()).unwrap();
            let dinv = d_half.apply_inv_half(&d_half.apply_inv_half(v).unwrap()).unwrap();
            dinv.iter().zip(back.as_slice()).map(|(a, b)| a + b).collect()
        };
        let mut s = DMatrix::zeros(dim, dim);
        for j in 0..dim {
            let mut e = vec![0.0; dim];
            e[j] = 1.0;
            s.set_column(j, &nalgebra::DVector::from_vec(apply_s(&e)));
        }
        let w: Vec<f64> = il.d().iter().zip(h.r_inv()).map(|(a, r)| a * r).collect();
        let back = h.apply_linv_t(h.network().observe_adjoint(&w).unwrap().as_slice()).unwrap();
        let dinv_b = d_half.apply_inv_half(&d_half.apply_inv_half(il.b()).unwrap()).unwrap();
        let rhs: Vec<f64> = dinv_b.iter().zip(back.as_slice()).map(|(a, b)| a + b).collect();
        let dp = s.lu().solve(&DMatrix::from_column_slice(dim, 1, &rhs)).unwrap();
        for (x, y) in report.increment.as_slice().iter().zip(dp.iter()) {
            assert!((x - y).abs() <= 1e-8 * dp.amax());
        }
    }

    #[test]
    fn no_preconditioner_equals_identity_factor() {
        let sc = tiny("lorenz96");
        let (problem, twin) = setup(&sc);
        let state = OuterState::initial(&problem, &twin).unwrap();
        let il = InnerLoop::new(&problem, &state, &twin).unwrap();
        let opts = PcgOptions::default();
        let report = il.solve(&PrecondSpec::None, &opts, None, Execution::Serial, false).unwrap();
        let (x, _) = pcg_split(il.hessian(), il.rhs(), &Identity, None, &opts, None).unwrap();
        assert_eq!(report.increment_tilde, x);
    }

    #[test]
    fn deterministic_needs_previous_loop() {
        let sc = tiny("lorenz96");
        let (problem, twin) = setup(&sc);
        let state = OuterState::initial(&problem, &twin).unwrap();
        let err = run_inner_loop(
            &problem,
            &state,
            &twin,
            &PrecondSpec::Deterministic { rank: 2 },
            &PcgOptions::default(),
            None,
        )
        .unwrap_err();
        assert_eq!(err, Error::NoPreviousLoop);
    }

    #[test]
    fn cost_is_non_increasing_for_every_spec() {
        let sc = tiny("lorenz96");
        let (problem, twin) = setup(&sc);
        let s0 = OuterState::initial(&problem, &twin).unwrap();
        let l1 = InnerLoop::new(&problem, &s0, &twin).unwrap();
        let r1 = l1.solve(&PrecondSpec::None, &PcgOptions::default(), None, Execution::Serial, false).unwrap();
        let s1 = outer_update(&problem, &s0, &r1).unwrap();
        assert!(s1.consistency_error(&problem).unwrap() <= 1e-12);
        let l2 = InnerLoop::new(&problem, &s1, &twin).unwrap();
        let mut specs = vec![PrecondSpec::None, PrecondSpec::Deterministic { rank: 3 }];
        for m in [SketchMethod::Revd, SketchMethod::Nystrom, SketchMethod::Ritzit] {
            specs.push(PrecondSpec::Randomized(SketchConfig::new(m, 3, 2, 7)));
        }
        for spec in specs {
            let r = l2.solve(&spec, &PcgOptions::default(), Some(&l1), Execution::Serial, true).unwrap();
            for w in r.cost.windows(2) {
                assert!(w[1] <= w[0] + 1e-10 * w[0].abs(), "{}: {:?}", spec.label(), r.cost);
            }
            let (lo, hi) = r.preconditioned_extremes.unwrap();
            assert!(lo > 0.0 && hi >= lo);
        }
    }

    #[test]
    fn zero_increment_keeps_state() {
        let sc = tiny("lorenz96");
        let (problem, twin) = setup(&sc);
        let s0 = OuterState::initial(&problem, &twin).unwrap();
        let il = InnerLoop::new(&problem, &s0, &twin).unwrap();
        let mut r = il.solve(&PrecondSpec::None, &PcgOptions::default(), None, Execution::Serial, false).unwrap();
        r.increment = StateVector::zeros(sc.n, sc.steps + 1);
        let s1 = outer_update(&problem, &s0, &r).unwrap();
        assert_eq!(s1.p, s0.p);
        assert_eq!(s1.trajectory, s0.trajectory);
        assert_eq!(s1.loop_index, 1);
    }

    #[test]
    fn linear_model_converges_in_one_loop() {
        let sc = tiny("advection");
        let (problem, twin) = setup(&sc);
        let s0 = OuterState::initial(&problem, &twin).unwrap();
        let l1 = InnerLoop::new(&problem, &s0, &twin).unwrap();
        let r1 = l1.solve(&PrecondSpec::None, &tight(), None, Execution::Serial, false).unwrap();
        let s1 = outer_update(&problem, &s0, &r1).unwrap();
        let l2 = InnerLoop::new(&problem, &s1, &twin).unwrap();
        let final_cost = *r1.cost.last().unwrap();
        assert!((l2.cost_offset() - final_cost).abs() <= 1e-8 * final_cost);
        let r2 = l2.solve(&PrecondSpec::None, &tight(), None, Execution::Serial, false).unwrap();
        let size = r2.increment.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(size < 1e-8, "second increment {size}");
    }

    #[test]
    fn spec_labels() {
        assert_eq!(PrecondSpec::None.label(), "none");
        assert_eq!(
            PrecondSpec::Randomized(SketchConfig::new(SketchMethod::Revd, 15, 5, 3)).label(),
            "revd_k15_l5"
        );
    }
}
