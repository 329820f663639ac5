//! Incremental weak-constraint 4D-Var (forcing formulation) with
//! limited-memory preconditioners built from randomized eigendecompositions.
//!
//! The inner-loop system is the first-level-preconditioned Hessian
//! `A = I + D^{1/2} L^{-T} H^T R^{-1} H L^{-1} D^{1/2}`, applied matrix-free
//! through tangent-linear and adjoint model sweeps ([`operators`]). It is
//! solved with split-preconditioned CG ([`krylov`]) using a spectral-LMP
//! ([`lmp`]) whose eigenpair estimates come from REVD, Nystrom or
//! REVD-ritzit ([`randevd`]) on the current Hessian, or from the exact
//! eigenpairs of the previous inner loop's Hessian.
//!
//! Block operator applications and multi-seed studies fan out over rayon when
//! the `parallel` feature is enabled (the default); see [`exec::Execution`].

pub mod assimilation;
pub mod covariance;
pub mod error;
pub mod exec;
pub mod krylov;
pub mod linalg;
pub mod lmp;
pub mod models;
pub mod operators;
pub mod randevd;
pub mod scenario;
pub mod random;
mod ritz;
mod state;
pub mod study;

pub use error::{Error, Result};
pub use exec::Execution;
pub use ritz::{RitzPairs, RitzSource};
pub use state::StateVector;
