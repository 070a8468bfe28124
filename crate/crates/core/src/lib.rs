//! Workbench for sniffing unknown multiband signals from sub-Nyquist samples.
//!
//! The crate simulates the whole chain:
//!
//! * [`scene`] synthesizes ground-truth multiband frames at Nyquist resolution,
//! * [`sampling`] runs them through a simulated multi-coset front end,
//! * [`csrecover`] is the compressed-sensing baseline (SOMP, least squares and
//!   classical receivers),
//! * [`sigformer`] is the multi-task transformer (spectrum sensing, modulation
//!   classification and blind demodulation),
//! * [`training`] holds the losses, hand-derived gradients and the Adam loop,
//! * [`harness`] persists datasets and checkpoints and runs the benchmarks.

pub mod csrecover;
pub(crate) mod dsp;
pub mod error;
pub mod harness;
pub mod sampling;
pub mod scene;
pub mod sigformer;
pub mod training;

pub use error::{Error, Result};
pub use num_complex::Complex64;
