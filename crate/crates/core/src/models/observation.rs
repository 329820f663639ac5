use crate::error::{check_len, Error, Result};
use crate::state::StateVector;

/// Direct observations of every `space_stride`-th variable at every
/// `time_stride`-th step.
///
/// Observation times are counted back from the final step, so `t_N` is always
/// observed and `t_0` never is. Observed variables are `s-1, 2s-1, ...` (every
/// `s`-th in one-based numbering). Observation vectors are stacked by time,
/// then by variable index.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationNetwork {
    n: usize,
    steps: usize,
    space_stride: usize,
    time_stride: usize,
    times: Vec<usize>,
    indices: Vec<usize>,
}

impl ObservationNetwork {
    pub fn new(n: usize, steps: usize, space_stride: usize, time_stride: usize) -> Result<Self> {
        if space_stride == 0 || space_stride > n {
            return Err(Error::InvalidParameter(format!(
                "space stride {space_stride} inconsistent with {n} grid points"
            )));
        }
        if time_stride == 0 || time_stride > steps {
            return Err(Error::InvalidParameter(format!(
                "time stride {time_stride} inconsistent with {steps} steps"
            )));
        }
        let mut times: Vec<usize> = (0..)
            .map(|m| steps as isize - (m * time_stride) as isize)
            .take_while(|&t| t >= 1)
            .map(|t| t as usize)
            .collect();
        times.reverse();
        let indices = (space_stride - 1..n).step_by(space_stride).collect();
        Ok(Self {
            n,
            steps,
            space_stride,
            time_stride,
            times,
            indices,
        })
    }

    /// A network with no observations at all.
    pub fn empty(n: usize, steps: usize) -> Self {
        Self {
            n,
            steps,
            space_stride: n.max(1),
            time_stride: steps.max(1),
            times: Vec::new(),
            indices: Vec::new(),
        }
    }

    pub fn space_stride(&self) -> usize {
        self.space_stride
    }

    pub fn time_stride(&self) -> usize {
        self.time_stride
    }

    /// Observed time indices in increasing order.
    pub fn times(&self) -> &[usize] {
        &self.times
    }

    /// Observed variable indices (the same at every observed time).
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Observation count at each time `t_0..t_N`.
    pub fn counts_per_time(&self) -> Vec<usize> {
        let mut counts = vec![0; self.steps + 1];
        for &t in &self.times {
            counts[t] = self.indices.len();
        }
        counts
    }

    /// Total number of observations `q`.
    pub fn total(&self) -> usize {
        self.times.len() * self.indices.len()
    }

    /// Selects the observed components of a trajectory.
    pub fn observe(&self, traj: &[f64]) -> Result<Vec<f64>> {
        check_len("observed trajectory", self.n * (self.steps + 1), traj.len())?;
        let mut y = Vec::with_capacity(self.total());
        for &t in &self.times {
            let block = &traj[t * self.n..(t + 1) * self.n];
            y.extend(self.indices.iter().map(|&j| block[j]));
        }
        Ok(y)
    }

    /// Transpose of [`ObservationNetwork::observe`]: scatters into a zero trajectory.
    pub fn observe_adjoint(&self, y: &[f64]) -> Result<StateVector> {
        check_len("observation vector", self.total(), y.len())?;
        let mut out = StateVector::zeros(self.n, self.steps + 1);
        let mut it = y.iter();
        for &t in &self.times {
            let block = out.block_mut(t);
            for &j in &self.indices {
                block[j] = *it.next().expect("length checked");
            }
        }
        Ok(out)
    }

    /// Observations of a single time level, if `t` is observed.
    pub fn observe_at(&self, t: usize, x: &[f64]) -> Option<Vec<f64>> {
        self.times
            .binary_search(&t)
            .ok()
            .map(|_| self.indices.iter().map(|&j| x[j]).collect())
    }
}
