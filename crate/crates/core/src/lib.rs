//! Thompson sampling laboratory for the linear-Gaussian bandit.
//!
//! The crate is organised bottom-up:
//!
//! * [`linalg`] dense symmetric linear algebra (spectral powers, log-determinants,
//!   Sherman-Morrison updates, Gaussian sampling).
//! * [`bandit`] the environment, the conjugate posterior and the Thompson sampling loop.
//! * [`bounds`] closed-form upper and lower regret bounds.
//! * [`elliptical`] the generalized elliptical potential inequality and its fuzzer.
//! * [`regret_lab`] Monte Carlo regret curves, event-probability and chi-square diagnostics,
//!   and the burn-in/long-run decoupling experiment.
//! * [`logconcave`] Thompson sampling under strongly log-concave priors and noise via MALA.
//!
//! Replicate loops run on rayon when the `parallel` feature is enabled (the default) and
//! fall back to plain iterators otherwise. Every replicate owns its own counter-based RNG
//! stream, so results are identical for any worker count.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bandit;
pub mod bounds;
pub mod elliptical;
mod error;
pub mod linalg;
pub mod logconcave;
pub mod parallel;
pub mod regret_lab;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
pub use linalg::{SpdMatrix, SpectralDecomposition};

pub use nalgebra::{DMatrix, DVector};
