//! Discrete dynamical models, their tangent-linear and adjoint steps, and the
//! direct observation operator.
//!
//! All models are pure: a step is a function of its inputs only, so the same
//! model value can be shared across threads.

mod advection;
mod lorenz96;
mod observation;

pub use advection::AdvectionModel;
pub use lorenz96::{lorenz96_rhs, Lorenz96Model};
pub use observation::ObservationNetwork;

use crate::error::{check_finite, check_len, Error, Result};
use crate::state::StateVector;

/// Space/time discretization of an assimilation window.
///
/// The window contains `steps + 1` times `t_0..t_N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelGrid {
    pub n: usize,
    pub steps: usize,
    pub dt: f64,
    pub dx: f64,
}

impl ModelGrid {
    /// Grid on the unit periodic domain (`dx = 1/n`).
    pub fn new(n: usize, steps: usize, dt: f64) -> Result<Self> {
        let grid = Self {
            n,
            steps,
            dt,
            dx: 1.0 / n as f64,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 4 {
            return Err(Error::InvalidParameter(format!(
                "state dimension must be at least 4, got {}",
                self.n
            )));
        }
        if self.steps < 1 {
            return Err(Error::InvalidParameter("window needs at least one step".into()));
        }
        // dt = 0 is allowed for the identity-step edge case; negative is not.
        if !(self.dt >= 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("invalid time step {}", self.dt)));
        }
        if !(self.dx > 0.0 && self.dx.is_finite()) {
            return Err(Error::InvalidParameter(format!("invalid grid spacing {}", self.dx)));
        }
        Ok(())
    }

    /// Length of a control or trajectory vector, `n (N + 1)`.
    pub fn window_len(&self) -> usize {
        self.n * (self.steps + 1)
    }
}

/// A discrete model step with its exact tangent-linear and adjoint.
pub trait Dynamics: Send + Sync {
    fn grid(&self) -> &ModelGrid;

    /// Nonlinear step `x_{i+1} = M(x_i)`.
    fn step(&self, x: &[f64]) -> Result<Vec<f64>>;

    /// Jacobian of [`Dynamics::step`] at `x` applied to `dx`.
    fn tlm_step(&self, x: &[f64], dx: &[f64]) -> Result<Vec<f64>>;

    /// Transpose of [`Dynamics::tlm_step`] at `x` applied to `lambda`.
    fn adjoint_step(&self, x: &[f64], lambda: &[f64]) -> Result<Vec<f64>>;
}

/// The models available to configuration-driven experiments.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Advection(AdvectionModel),
    Lorenz96(Lorenz96Model),
}

impl Dynamics for Model {
    fn grid(&self) -> &ModelGrid {
        match self {
            Model::Advection(m) => m.grid(),
            Model::Lorenz96(m) => m.grid(),
        }
    }

    fn step(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Model::Advection(m) => m.step(x),
            Model::Lorenz96(m) => m.step(x),
        }
    }

    fn tlm_step(&self, x: &[f64], dx: &[f64]) -> Result<Vec<f64>> {
        match self {
            Model::Advection(m) => m.tlm_step(x, dx),
            Model::Lorenz96(m) => m.tlm_step(x, dx),
        }
    }

    fn adjoint_step(&self, x: &[f64], lambda: &[f64]) -> Result<Vec<f64>> {
        match self {
            Model::Advection(m) => m.adjoint_step(x, lambda),
            Model::Lorenz96(m) => m.adjoint_step(x, lambda),
        }
    }
}

/// Runs the forcing recursion `x_0 = p_0`, `x_{i+1} = M(x_i) + eta_{i+1}`.
pub fn integrate<M: Dynamics + ?Sized>(model: &M, p: &StateVector) -> Result<StateVector> {
    let grid = model.grid();
    check_len("control vector", grid.window_len(), p.len())?;
    let mut traj = StateVector::zeros(grid.n, grid.steps + 1);
    traj.block_mut(0).copy_from_slice(p.block(0));
    for i in 0..grid.steps {
        let mut next = model.step(traj.block(i))?;
        for (x, eta) in next.iter_mut().zip(p.block(i + 1)) {
            *x += eta;
        }
        check_finite("trajectory integration", &next)?;
        traj.block_mut(i + 1).copy_from_slice(&next);
    }
    Ok(traj)
}

/// Free run of the model from `x0` for `steps` steps, returning every state.
pub fn free_run<M: Dynamics + ?Sized>(model: &M, x0: &[f64], steps: usize) -> Result<Vec<Vec<f64>>> {
    let mut states = Vec::with_capacity(steps + 1);
    states.push(x0.to_vec());
    for i in 0..steps {
        let next = model.step(&states[i])?;
        check_finite("free model run", &next)?;
        states.push(next);
    }
    Ok(states)
}
