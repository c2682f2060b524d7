//! Point cloud registration by diffusion over matching matrices.
//!
//! The crate is `no_std` (it needs `alloc`) and carries the numerical core:
//! geometry, the matching-matrix space, the diffusion model, the denoising
//! module and the synthetic benchmark. File formats, timing and the command
//! line live in the companion `diffreg` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod geometry;
pub mod matrixspace;
pub mod diffusion;
pub mod denoiser;
pub mod bench;

pub use error::{Error, Result};
