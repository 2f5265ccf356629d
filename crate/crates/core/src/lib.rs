//! Temporal-resolution domain adaptation for spiking neural networks.
//!
//! A spiking model trained on data with one timestep duration generally
//! degrades when run on data with a different timestep duration. This crate
//! implements parameter adaptation methods that map neuron dynamics across
//! temporal resolutions using only the resolution ratio, with no retraining:
//!
//! * [`adapt::adapt_integral`] — exact under piecewise-constant input,
//!   based on the matrix power of the state-transition matrix,
//! * [`adapt::adapt_euler`] — first-order rescaling of the dynamics,
//! * [`adapt::adapt_expectation`] — matches expected state trajectories for
//!   integer resolution ratios,
//! * [`adapt::adapt_time_constant`] — the classical benchmark that rescales
//!   exponential decay parameters only.
//!
//! Around the methods sit the pieces needed to exercise them end to end:
//! small dense matrix algebra ([`linalg`]), the adaptive leaky
//! integrate-and-fire neuron and its general linear-state form ([`neuron`]),
//! spike-train resampling ([`resample`]), analytic normalization-statistics
//! adaptation ([`normstats`]), trace-matching quality metrics ([`metrics`]),
//! a desk-scale trainable network ([`network`]), serialization ([`io`]) and
//! experiment drivers ([`harness`]).
//!
//! Numerical kernels are generic over the scalar type through the [`Real`]
//! trait (`f32` or `f64`); the network, file formats and experiment harness
//! are fixed to `f64`.

// Index-based loops are kept where they mirror the matrix/recursion math.
#![allow(clippy::needless_range_loop)]

pub mod adapt;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod network;
pub mod neuron;
pub mod normstats;
pub mod resample;
pub mod rng;
mod scalar;

pub use scalar::Real;

/// Dense matrix with `f64` entries.
pub type Mat64 = linalg::Mat<f64>;
/// Dense matrix with `f32` entries.
pub type Mat32 = linalg::Mat<f32>;
/// Double-precision adaptive LIF parameter set.
pub type AdLifParams64 = neuron::AdLifParams<f64>;
/// Double-precision general linear-state neuron.
pub type GeneralNeuron64 = neuron::GeneralNeuron<f64>;
/// Double-precision normalization statistics.
pub type NormStats64 = normstats::NormStats<f64>;
