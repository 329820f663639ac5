use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::orthonormality_defect;

/// Where a set of approximate eigenpairs came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RitzSource {
    Lanczos,
    Revd,
    Nystrom,
    Ritzit,
    Exact,
}

impl RitzSource {
    pub fn name(self) -> &'static str {
        match self {
            RitzSource::Lanczos => "lanczos",
            RitzSource::Revd => "revd",
            RitzSource::Nystrom => "nystrom",
            RitzSource::Ritzit => "ritzit",
            RitzSource::Exact => "exact",
        }
    }
}

/// Approximate eigenpairs `(U, Theta)` with orthonormal `U` and values in
/// decreasing order.
#[derive(Debug, Clone, PartialEq)]
pub struct RitzPairs {
    pub vectors: DMatrix<f64>,
    pub values: Vec<f64>,
    pub source: RitzSource,
}

impl RitzPairs {
    pub fn new(vectors: DMatrix<f64>, values: Vec<f64>, source: RitzSource) -> Result<Self> {
        if vectors.ncols() != values.len() {
            return Err(Error::DimensionMismatch {
                context: "Ritz vectors vs values",
                expected: values.len(),
                actual: vectors.ncols(),
            });
        }
        Ok(Self {
            vectors,
            values,
            source,
        })
    }

    /// Pairs with no vectors, for a dimension-`n` space.
    pub fn empty(n: usize, source: RitzSource) -> Self {
        Self {
            vectors: DMatrix::zeros(n, 0),
            values: Vec::new(),
            source,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.nrows()
    }

    /// Keeps the leading `k` pairs.
    pub fn truncate(mut self, k: usize) -> Self {
        if k < self.len() {
            self.values.truncate(k);
            self.vectors = self.vectors.columns(0, k).into_owned();
        }
        self
    }

    pub fn orthonormality_defect(&self) -> f64 {
        orthonormality_defect(&self.vectors)
    }

    pub fn is_sorted_decreasing(&self) -> bool {
        self.values.windows(2).all(|w| w[0] >= w[1])
    }

    /// `U diag(Theta) U^T`
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut scaled = self.vectors.clone();
        for (j, &t) in self.values.iter().enumerate() {
            scaled.column_mut(j).scale_mut(t);
        }
        scaled * self.vectors.transpose()
    }
}
