//! Simulation and analysis toolkit for single-photon path entanglement
//! certified with phase-randomized coherent states, decoy intensities and
//! balanced homodyne detection.
//!
//! The numeric core is generic over [`scalar::Real`] (`f32` or `f64`); the
//! aliases below pin it to `f64`. Monte Carlo sampling always runs in `f64`.

// `!(x >= 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channels;
pub mod chsh;
pub mod decoy;
pub mod fair_sampling;
pub mod fock;
pub mod homodyne;
pub mod scalar;
pub mod stats;
pub mod tomography;

pub use homodyne::{BatchPlan, MeasurementSettings, Pipeline, SampleBatch, SampleRecord, Source};

/// Truncated operator over `f64`.
pub type Operator = fock::TruncatedOperator<f64>;
pub type Postselection = fock::PostselectionOperators<f64>;
pub type TwoModeState = channels::TwoModeFockState<f64>;
pub type Noise = channels::NoiseModel<f64>;
pub type PoissonWeights = channels::PoissonWeights<f64>;
pub type IntensitySet = decoy::DecoyIntensitySet<f64>;
pub type Gains = decoy::GainVector<f64>;
pub type Bounded = decoy::BoundedEstimate<f64>;
pub type Correlation = chsh::CorrelationBound<f64>;
pub type Chsh = chsh::ChshResult<f64>;
pub type Histogram = tomography::BinnedHistogram<f64>;
pub type Povm = tomography::FactorizedPovm<f64>;
pub type Reconstruction = tomography::TomographyResult<f64>;
pub type Register = fair_sampling::SettingsRegister<f64>;
pub type Flagged = fair_sampling::FlaggedState<f64>;
