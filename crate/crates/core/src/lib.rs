//! Numerical laboratory for the smallest singular value of heavy-tailed
//! rectangular random matrices.
//!
//! The crate provides entry samplers with exact tail constants, the
//! truncation/resampling decomposition of a heavy-tailed matrix, a dense
//! singular value kernel, Monte Carlo checks of the upper-bound and
//! universality arguments, anti-concentration and net tools, a polytope
//! inradius certificate, and a deterministic sweep harness with a CLI.

pub mod anticoncentration;
pub mod decomposition;
pub mod error;
pub mod harness;
pub mod polytope;
pub mod quadrature;
pub mod rng;
pub mod spectra;
pub mod stats;
pub mod tail_sampler;
pub mod universality_check;
pub mod upper_bound;

pub use error::{Error, Result};

/// Dense column-major real matrix used throughout the crate.
pub type Mat = nalgebra::DMatrix<f64>;
