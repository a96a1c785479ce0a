//! Simulation and reconstruction of X-ray nano-holotomography data acquired
//! with a structured (aberrated) conic-beam illumination.
//!
//! The crate is organised bottom-up:
//!
//! * [`wavefield`] holds the complex field container and the primitive linear
//!   operators (Fresnel propagation, magnification, shifts) with adjoints.
//! * [`forward`] derives the conic geometry and composes the probe-aware
//!   forward model, its adjoints, data rescaling and a brute-force oracle.
//! * [`phantom`] generates ground truth: layered cube, transmittances,
//!   synthetic KB-like probes and the Poisson noise protocol.
//! * [`solver`] reconstructs object transmittances and the probe jointly with
//!   Dai–Yuan nonlinear conjugate gradients.
//! * [`baseline`] is the conventional flat-field + MultiPaganin pipeline.
//! * [`tomo`] is the parallel-beam Radon pair and CG tomography.
//! * [`metrics`] and [`io`] cover SSIM, error series and persistence.
//! * [`pipeline`] strings the stages together for the CLI.

pub mod baseline;
pub mod error;
pub mod forward;
pub mod io;
pub mod metrics;
pub mod phantom;
pub mod pipeline;
pub mod solver;
pub mod tomo;
pub mod wavefield;

#[cfg(test)]
mod testutil;

pub use error::{HoloError, Result};

/// Complex sample type used throughout the crate.
pub type C64 = num_complex::Complex64;
