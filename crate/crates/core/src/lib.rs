//! Desk-scale laboratory for guided diffusion sampling.
//!
//! Every score in this crate is analytic: the "data" is an isotropic Gaussian
//! mixture whose noised density and score have closed forms at every noise
//! level, and the "model" is the exact score of a deliberately perturbed
//! mixture. That makes it possible to check samplers, discriminator guidance
//! and epsilon scaling against exact oracles instead of trained networks.
//!
//! Module map:
//! - [`schedules`]: discrete DDPM schedule and the continuous sigma grid.
//! - [`world`]: Gaussian-mixture worlds, exact scores, forward noising and the
//!   exact density-ratio correction.
//! - [`discriminator`]: a small MLP classifier whose logit gradient estimates
//!   the correction term.
//! - [`samplers`]: ancestral, probability-flow Euler/Heun and reverse-SDE
//!   samplers with guidance weights and epsilon scaling.
//! - [`diagnostics`]: epsilon-norm drift curves, the one-step variance
//!   inflation check, Frechet / sliced-Wasserstein metrics and ablation grids.
//! - [`verify`]: the invariant suite behind the `verify` command.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod diagnostics;
pub mod discriminator;
mod error;
pub mod output;
pub mod parallel;
pub mod rng;
pub mod samplers;
pub mod schedules;
pub mod verify;
pub mod world;

pub use error::{Error, Result};
pub use parallel::Execution;
