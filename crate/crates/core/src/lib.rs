//! Simulator and training toolkit for large excitable spiking networks
//! driven by a slow-fast sine-squared map.
//!
//! The crate covers the full pipeline: per-neuron map dynamics
//! ([`dynamics`]), the modulator-to-camera optics path ([`optics`]), spike
//! detection and rank-order sparsity gating ([`spikes`]), scripted
//! single-neuron characterization protocols ([`characterize`]), digit-image
//! ingestion and input mixing ([`mnist`]), and readout training by
//! simultaneous-perturbation descent or ridge regression ([`readout`]).

pub mod cache;
pub mod characterize;
pub mod convention;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod mnist;
pub mod optics;
pub mod params;
pub mod readout;
pub mod spikes;
pub mod state;

pub use dynamics::{rest_state, run, step, RestState, Simulator};
pub use error::{Error, Result};
pub use optics::{DoeKernel, HeterogeneitySpec, OpticsModel, OpticsMode, OpticsSpec};
pub use params::NetworkParams;
pub use spikes::{FeatureMode, SparseResponse, SpikeRecord};
pub use state::{NeuronArrays, Trajectory};
