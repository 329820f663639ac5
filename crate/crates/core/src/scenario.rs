//! Parameter sets for the two twin experiments, with every field overridable.

use crate::assimilation::{gaussian_bump, lorenz96_spinup, Problem};
use crate::covariance::CovarianceSpec;
use crate::error::{Error, Result};
use crate::models::{AdvectionModel, Lorenz96Model, Model, ModelGrid, ObservationNetwork};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Advection,
    Lorenz96,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Advection => "advection",
            ModelKind::Lorenz96 => "lorenz96",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "advection" => Ok(ModelKind::Advection),
            "lorenz96" => Ok(ModelKind::Lorenz96),
            other => Err(Error::InvalidParameter(format!("unknown model '{other}'"))),
        }
    }
}

/// Physical and statistical setup of a twin experiment.
///
/// Length scales are in grid units.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub model: ModelKind,
    pub n: usize,
    pub steps: usize,
    pub dt: f64,
    /// Lorenz 96 forcing `F`.
    pub forcing: f64,
    pub spinup_steps: usize,
    pub spinup_perturbation: f64,
    pub sigma_b: f64,
    pub length_b: f64,
    pub sigma_q: f64,
    pub length_q: f64,
    pub sigma_o: f64,
    pub space_stride: usize,
    pub time_stride: usize,
}

impl Scenario {
    /// 40 points, 50 steps, Courant number 0.8, 100 observations.
    pub fn advection() -> Self {
        Self {
            model: ModelKind::Advection,
            n: 40,
            steps: 50,
            dt: 1.0 / 50.0,
            forcing: 8.0,
            spinup_steps: 0,
            spinup_perturbation: 0.0,
            sigma_b: 0.1,
            length_b: 10.0,
            sigma_q: 0.05,
            length_q: 10.0,
            sigma_o: 0.05,
            space_stride: 4,
            time_stride: 5,
        }
    }

    /// 80 variables, 150 steps of 0.025, 120 observations.
    pub fn lorenz96_base() -> Self {
        Self {
            model: ModelKind::Lorenz96,
            n: 80,
            steps: 150,
            dt: 2.5e-2,
            forcing: 8.0,
            spinup_steps: 500,
            spinup_perturbation: 0.01,
            sigma_b: 0.2,
            length_b: 2.0,
            sigma_q: 0.1,
            length_q: 2.0,
            sigma_o: 0.15,
            space_stride: 10,
            time_stride: 10,
        }
    }

    pub fn grid(&self) -> Result<ModelGrid> {
        ModelGrid::new(self.n, self.steps, self.dt)
    }

    pub fn build_model(&self) -> Result<Model> {
        let grid = self.grid()?;
        Ok(match self.model {
            ModelKind::Advection => Model::Advection(AdvectionModel::from_grid(grid)?),
            ModelKind::Lorenz96 => Model::Lorenz96(Lorenz96Model::new(grid, self.forcing)?),
        })
    }

    pub fn build_problem(&self) -> Result<Problem<Model>> {
        let model = self.build_model()?;
        let network = ObservationNetwork::new(self.n, self.steps, self.space_stride, self.time_stride)?;
        Problem::new(
            model,
            network,
            &CovarianceSpec::soar(self.n, self.sigma_b, self.length_b),
            &CovarianceSpec::laplacian(self.n, self.sigma_q, self.length_q),
            self.sigma_o,
        )
    }

    /// Truth at `t_0`.
    pub fn initial_truth(&self) -> Result<Vec<f64>> {
        match self.model {
            ModelKind::Advection => Ok(gaussian_bump(self.n)),
            ModelKind::Lorenz96 => {
                let model = Lorenz96Model::new(ModelGrid::new(self.n, 1, self.dt)?, self.forcing)?;
                lorenz96_spinup(&model, self.spinup_perturbation, self.spinup_steps)
            }
        }
    }
}
