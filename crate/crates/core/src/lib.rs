//! Training-free multi-reference video stylization guidance.
//!
//! The crate works on small latent grids and drives a seeded toy denoiser, so
//! every guidance mechanism can be checked against direct oracles:
//!
//! - [`tensor`]: the rank-4 latent grid, channel statistics and AdaIN.
//! - [`frequency`]: FFT low/high split and high-frequency compensation.
//! - [`flow`]: flow tracing, novel-region reference masks and rank-6
//!   correspondence masks.
//! - [`attention`]: plain, masked, isolated and guided attention.
//! - [`decomposition`]: appearance/dynamics split over a causal block codec.
//! - [`pipeline`]: schedules, inversion, the two-branch denoising loop and the
//!   file-level operations behind the `flowstyle` binary.

pub mod attention;
pub mod decomposition;
mod error;
pub mod flow;
pub mod frequency;
pub mod pipeline;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Dims4, Grid4};
