//! Pruned-transfer learning workbench.
//!
//! Implements the prune/allocate/calibrate transfer pipeline and its
//! baselines (fine-tuning, starting-point regularization, Fisher-weighted
//! variants) on three benchmarks: a synthetic regression family, neural-ODE
//! calibration of damped oscillators, and a physics-informed network for
//! the 2-D diffusion equation. A seeded harness runs experiment grids and
//! writes CSV tables.
//!
//! The numeric core is generic over the scalar type via [`real::Real`]
//! (`f32` or `f64`); the tasks and the harness run at `f64`, and the crate
//! root exports `f64` aliases for the core types.

pub mod autodiff;
pub mod checkpoint;
pub mod error;
pub mod harness;
pub mod nn;
pub mod ode;
pub mod optim;
pub mod props;
pub mod real;
pub mod rng;
pub mod tasks;
pub mod transfer;

pub use error::{Error, Result};
pub use real::Real;

/// `f64` instantiations of the scalar-generic core types.
pub type Network64 = nn::Network<f64>;
pub type ParamVector64 = nn::ParamVector<f64>;
pub type GradientVector64 = autodiff::GradientVector<f64>;
pub type Jet64 = autodiff::Jet2<f64>;
pub type AdamState64 = optim::AdamState<f64>;
pub type Penalty64 = optim::Penalty<f64>;
