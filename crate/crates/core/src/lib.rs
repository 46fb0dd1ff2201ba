//! Learning continuous-time linear latent (Koopman) models of nonlinear
//! dynamical systems.
//!
//! An encoder φ lifts observations into a latent space where a single matrix
//! `K` advances the state by one sampling period; a decoder ψ maps back. The
//! real principal logarithm `D = log K` turns the discrete model into a
//! continuous one, so states can be queried at any real time via
//! `ψ(exp(t·D)·φ(x₀))`.
//!
//! Modules:
//! - [`numlin`]: eigendecomposition, matrix log/exp/powers.
//! - [`systems`]: benchmark ODEs, integration, datasets on disk.
//! - [`net`]: MLPs with hand-written backprop and Adam.
//! - [`koopman`]: the model, its losses and the two-stage training loop.
//! - [`continuous`]: generator extraction and arbitrary-time prediction.
//! - [`eval`]: MSE protocol, spectra, Lyapunov exponents, reports.

pub mod continuous;
pub mod eval;
pub mod koopman;
pub mod net;
pub mod numlin;
pub mod systems;

mod error;

pub use error::{Error, Result};
