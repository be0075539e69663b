//! Preconditioned unadjusted Langevin sampling.
//!
//! The crate covers the full pipeline: dense symmetric linear algebra
//! ([`linalg`]), target descriptions ([`target`]), one-step Markov kernels and
//! their contraction parameters ([`kernels`]), burn-in/thinning/learning
//! schedules ([`budget`]), covariance and Fisher estimators ([`estimators`]),
//! the thinned and two-phase preconditioned samplers ([`sampler`]), an exact
//! joint-law oracle for Gaussian targets ([`oracle`]) and reproducible
//! experiment recipes ([`experiments`]).
//!
//! Parallel repetition uses rayon behind the `parallel` feature (on by
//! default); with the feature disabled every code path runs sequentially and
//! produces bit-identical results.

// Guards are written `!(x > 0.0)` on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod budget;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod flops;
pub mod kernels;
pub mod linalg;
pub mod numerics;
pub mod oracle;
pub mod par;
pub mod rng;
pub mod sampler;
pub mod target;

pub use error::{Error, Result};
pub use linalg::{GaussianLaw, SpdMatrix};
pub use numerics::NumericPolicy;
pub use target::Target;
