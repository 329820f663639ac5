use super::{Dynamics, ModelGrid};
use crate::error::{check_finite, check_len, Result};

/// Lorenz 96 tendency `dX_j/dt = -X_{j-2} X_{j-1} + X_{j-1} X_{j+1} - X_j + F`,
/// cyclic in `j`.
pub fn lorenz96_rhs(x: &[f64], forcing: f64) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|j| {
            let m2 = x[(j + n - 2) % n];
            let m1 = x[(j + n - 1) % n];
            let p1 = x[(j + 1) % n];
            (p1 - m2) * m1 - x[j] + forcing
        })
        .collect()
}

/// Jacobian of the tendency at `x` applied to `v`.
fn rhs_jvp(x: &[f64], v: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|j| {
            let (m2, m1, p1) = ((j + n - 2) % n, (j + n - 1) % n, (j + 1) % n);
            (v[p1] - v[m2]) * x[m1] + (x[p1] - x[m2]) * v[m1] - v[j]
        })
        .collect()
}

/// Transposed Jacobian of the tendency at `x` applied to `w`.
fn rhs_vjp(x: &[f64], w: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| {
            let (m2, m1, p1, p2) = ((i + n - 2) % n, (i + n - 1) % n, (i + 1) % n, (i + 2) % n);
            -w[i] - w[p2] * x[p1] + w[p1] * (x[p2] - x[m1]) + w[m1] * x[m2]
        })
        .collect()
}

fn shifted(x: &[f64], h: f64, k: &[f64]) -> Vec<f64> {
    x.iter().zip(k).map(|(a, b)| a + h * b).collect()
}

/// Lorenz 96 integrated with classical fourth-order Runge-Kutta.
///
/// The tangent-linear and adjoint steps differentiate the discrete RK4 map,
/// so the adjoint is the exact transpose of the tangent-linear step.
#[derive(Debug, Clone, PartialEq)]
pub struct Lorenz96Model {
    grid: ModelGrid,
    forcing: f64,
}

/// RK4 stage states for one step.
struct Stages {
    states: [Vec<f64>; 4],
}

impl Lorenz96Model {
    pub fn new(grid: ModelGrid, forcing: f64) -> Result<Self> {
        grid.validate()?;
        Ok(Self { grid, forcing })
    }

    pub fn forcing(&self) -> f64 {
        self.forcing
    }

    fn stages(&self, x: &[f64]) -> (Stages, [Vec<f64>; 4]) {
        let h = self.grid.dt;
        let f = self.forcing;
        let k1 = lorenz96_rhs(x, f);
        let x2 = shifted(x, 0.5 * h, &k1);
        let k2 = lorenz96_rhs(&x2, f);
        let x3 = shifted(x, 0.5 * h, &k2);
        let k3 = lorenz96_rhs(&x3, f);
        let x4 = shifted(x, h, &k3);
        let k4 = lorenz96_rhs(&x4, f);
        (
            Stages {
                states: [x.to_vec(), x2, x3, x4],
            },
            [k1, k2, k3, k4],
        )
    }

    /// One RK4 step of length `dt`.
    pub fn rk4(&self, x: &[f64]) -> Vec<f64> {
        let h = self.grid.dt;
        let (_, [k1, k2, k3, k4]) = self.stages(x);
        (0..x.len())
            .map(|j| x[j] + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]))
            .collect()
    }
}

impl Dynamics for Lorenz96Model {
    fn grid(&self) -> &ModelGrid {
        &self.grid
    }

    fn step(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("lorenz96 state", self.grid.n, x.len())?;
        check_finite("lorenz96 input", x)?;
        let out = self.rk4(x);
        check_finite("lorenz96 step", &out)?;
        Ok(out)
    }

    fn tlm_step(&self, x: &[f64], dx: &[f64]) -> Result<Vec<f64>> {
        check_len("lorenz96 linearization state", self.grid.n, x.len())?;
        check_len("lorenz96 perturbation", self.grid.n, dx.len())?;
        let h = self.grid.dt;
        let (st, _) = self.stages(x);
        let [s1, s2, s3, s4] = &st.states;
        let d1 = rhs_jvp(s1, dx);
        let d2 = rhs_jvp(s2, &shifted(dx, 0.5 * h, &d1));
        let d3 = rhs_jvp(s3, &shifted(dx, 0.5 * h, &d2));
        let d4 = rhs_jvp(s4, &shifted(dx, h, &d3));
        Ok((0..dx.len())
            .map(|j| dx[j] + h / 6.0 * (d1[j] + 2.0 * d2[j] + 2.0 * d3[j] + d4[j]))
            .collect())
    }

    fn adjoint_step(&self, x: &[f64], lambda: &[f64]) -> Result<Vec<f64>> {
        check_len("lorenz96 linearization state", self.grid.n, x.len())?;
        check_len("lorenz96 adjoint", self.grid.n, lambda.len())?;
        let h = self.grid.dt;
        let (st, _) = self.stages(x);
        let [s1, s2, s3, s4] = &st.states;
        let mut out = lambda.to_vec();
        // Reverse sweep through the four stages of the tangent-linear step.
        let a4 = rhs_vjp(s4, &lambda.iter().map(|l| h / 6.0 * l).collect::<Vec<_>>());
        let mut dk3: Vec<f64> = lambda.iter().map(|l| h / 3.0 * l).collect();
        for j in 0..out.len() {
            out[j] += a4[j];
            dk3[j] += h * a4[j];
        }
        let a3 = rhs_vjp(s3, &dk3);
        let mut dk2: Vec<f64> = lambda.iter().map(|l| h / 3.0 * l).collect();
        for j in 0..out.len() {
            out[j] += a3[j];
            dk2[j] += 0.5 * h * a3[j];
        }
        let a2 = rhs_vjp(s2, &dk2);
        let mut dk1: Vec<f64> = lambda.iter().map(|l| h / 6.0 * l).collect();
        for j in 0..out.len() {
            out[j] += a2[j];
            dk1[j] += 0.5 * h * a2[j];
        }
        let a1 = rhs_vjp(s1, &dk1);
        for j in 0..out.len() {
            out[j] += a1[j];
        }
        Ok(out)
    }
}
