use crate::error::{check_len, Error, Result};

/// A stack of `blocks` state-sized blocks of length `n`.
///
/// Depending on context this holds the control vector (x0, eta_1, ..., eta_N),
/// its increment, or a model trajectory (x_0, ..., x_N).
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n: usize,
    data: Vec<f64>,
}

impl StateVector {
    pub fn zeros(n: usize, blocks: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * blocks],
        }
    }

    pub fn from_vec(n: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || !data.len().is_multiple_of(n) {
            return Err(Error::InvalidParameter(format!(
                "state length {} is not a multiple of block size {n}",
                data.len()
            )));
        }
        Ok(Self { n, data })
    }

    pub fn from_blocks(n: usize, blocks: &[Vec<f64>]) -> Result<Self> {
        let mut data = Vec::with_capacity(n * blocks.len());
        for b in blocks {
            check_len("state block", n, b.len())?;
            data.extend_from_slice(b);
        }
        Ok(Self { n, data })
    }

    /// Block size (state dimension).
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_blocks(&self) -> usize {
        self.data.len() / self.n
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn block(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn block_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl AsRef<[f64]> for StateVector {
    fn as_ref(&self) -> &[f64] {
        &self.data
    }
}
