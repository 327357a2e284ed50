//! Systems of `N` birth-death processes on ℕ in mean-field interaction.
//!
//! The crate is organised bottom-up:
//!
//! * [`rates`] defines rate models and finite certificates for the convexity
//!   (`λ`) and Lipschitz (`α`) constants.
//! * [`measure`] holds truncated laws on ℕ, empirical measures and the
//!   Wasserstein-1 distance.
//! * [`ssa`] simulates the particle system exactly.
//! * [`coupling`] simulates two systems under the min/excess coupling and
//!   audits it on small enumerated state spaces.
//! * [`meanfield`] integrates the nonlinear master equation and simulates the
//!   nonlinear process.
//! * [`analysis`] runs the contraction, propagation-of-chaos and Lyapunov
//!   experiments.
//!
//! Replica loops go through [`exec`], which uses rayon when the `parallel`
//! feature is enabled and falls back to a plain loop otherwise. Every random
//! stream is keyed by `(seed, tag, index)` (see [`rng`]) so results do not
//! depend on scheduling.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod coupling;
pub mod error;
pub mod exec;
pub mod io;
pub mod meanfield;
pub mod measure;
pub mod rates;
pub mod rng;
pub mod ssa;
pub mod stats;

pub use error::{Error, Result};
pub use exec::Execution;
pub use measure::{DistN, EmpiricalMeasure};
pub use rates::{Interaction, RateModel};
pub use ssa::ParticleState;
