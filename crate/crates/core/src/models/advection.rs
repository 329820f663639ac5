use super::{Dynamics, ModelGrid};
use crate::error::{check_len, Error, Result};

/// First-order upwind discretization of `u_t + u_z = 0` on a periodic domain.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvectionModel {
    grid: ModelGrid,
    courant: f64,
}

impl AdvectionModel {
    pub fn new(grid: ModelGrid, courant: f64) -> Result<Self> {
        grid.validate()?;
        if !(courant > 0.0 && courant <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "upwind scheme needs 0 < C <= 1, got {courant}"
            )));
        }
        Ok(Self { grid, courant })
    }

    /// Model whose Courant number follows from the grid, `C = dt / dx`.
    pub fn from_grid(grid: ModelGrid) -> Result<Self> {
        Self::new(grid, grid.dt / grid.dx)
    }

    pub fn courant(&self) -> f64 {
        self.courant
    }

    /// `u'_j = u_j - C (u_j - u_{j-1})` with periodic wrap.
    pub fn advect(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_len("advection state", self.grid.n, u.len())?;
        let n = u.len();
        let c = self.courant;
        Ok((0..n)
            .map(|j| {
                let left = u[(j + n - 1) % n];
                u[j] - c * (u[j] - left)
            })
            .collect())
    }

    /// Transpose of the upwind stencil: `l'_j = (1 - C) l_j + C l_{j+1}`.
    pub fn advect_adjoint(&self, lambda: &[f64]) -> Result<Vec<f64>> {
        check_len("advection adjoint", self.grid.n, lambda.len())?;
        let n = lambda.len();
        let c = self.courant;
        Ok((0..n)
            .map(|j| (1.0 - c) * lambda[j] + c * lambda[(j + 1) % n])
            .collect())
    }
}

impl Dynamics for AdvectionModel {
    fn grid(&self) -> &ModelGrid {
        &self.grid
    }

    fn step(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.advect(x)
    }

    // The scheme is linear, so the tangent-linear model is the model itself.
    fn tlm_step(&self, x: &[f64], dx: &[f64]) -> Result<Vec<f64>> {
        check_len("linearization state", self.grid.n, x.len())?;
        self.advect(dx)
    }

    fn adjoint_step(&self, x: &[f64], lambda: &[f64]) -> Result<Vec<f64>> {
        check_len("linearization state", self.grid.n, x.len())?;
        self.advect_adjoint(lambda)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot;

    fn model(n: usize, c: f64) -> AdvectionModel {
        AdvectionModel::new(ModelGrid::new(n, 10, c / n as f64).unwrap(), c).unwrap()
    }

    #[test]
    fn constant_field_is_unchanged() {
        let m = model(8, 0.37);
        assert_eq!(m.advect(&[3.0; 8]).unwrap(), vec![3.0; 8]);
    }

    #[test]
    fn unit_courant_shifts_by_one_cell() {
        let m = model(10, 1.0);
        let mut u = vec![0.0; 10];
        u[5] = 1.0;
        let out = m.advect(&u).unwrap();
        let mut expected = vec![0.0; 10];
        expected[6] = 1.0;
        assert_eq!(out, expected);
    }

    #[test]
    fn hand_evaluated_stencil() {
        let m = model(4, 0.8);
        let out = m.advect(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        let expected = [0.2, 0.8, 0.0, 0.0];
        for (a, b) in out.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn adjoint_of_unit_courant_is_reverse_shift() {
        let m = model(6, 1.0);
        let lam = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let out = m.advect_adjoint(&lam).unwrap();
        assert_eq!(out, vec![2.0, 3.0, 4.0, 5.0, 6.0, 1.0]);
        assert_eq!(m.advect_adjoint(&[3.0; 6]).unwrap(), vec![3.0; 6]);
    }

    #[test]
    fn adjoint_dot_product() {
        let m = model(12, 0.8);
        let d: Vec<f64> = (0..12).map(|i| ((i * 7) as f64).sin()).collect();
        let l: Vec<f64> = (0..12).map(|i| ((i * 3) as f64).cos()).collect();
        let lhs = dot(&m.advect(&d).unwrap(), &l);
        let rhs = dot(&d, &m.advect_adjoint(&l).unwrap());
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn zero_adjoint_input() {
        let m = model(5, 0.5);
        assert_eq!(m.advect_adjoint(&[0.0; 5]).unwrap(), vec![0.0; 5]);
    }

    #[test]
    fn rejects_unstable_courant_and_bad_dims() {
        let grid = ModelGrid::new(8, 4, 0.1).unwrap();
        assert!(AdvectionModel::new(grid, 1.2).is_err());
        assert!(AdvectionModel::new(grid, 0.0).is_err());
        assert!(model(8, 0.5).advect(&[1.0; 7]).is_err());
    }
}
