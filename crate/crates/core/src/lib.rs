//! Synthetic WiFi baseband workbench for RF device fingerprinting.
//!
//! The crate synthesizes DSSS-like (802.11b-style) and minimal OFDM baseband
//! frames, injects per-device time-varying hardware impairments (including a
//! power-on warm-up phase), measures those impairments back from raw I/Q, and
//! trains a sequential-transfer fingerprinting pipeline (impairment-estimation
//! regressor feeding a device-classification head) against a direct-CNN
//! baseline.
//!
//! Module map:
//! - [`waveform`]: ideal frame synthesis (DSSS / OFDM) with known references.
//! - [`impair`]: causal device impairments, warm-up dynamics, channel model.
//! - [`metrology`]: data-aided measurement of impairment vectors from I/Q.
//! - [`tensornn`]: minimal dense/conv NN engine with reverse-mode gradients
//!   and Adam.
//! - [`heedful`]: the transfer-learning pipeline and the baseline classifier.
//! - [`datastore`]: the RFF1 dataset container, splits and windowing.
//! - [`experiments`]: batch experiment runners behind the `rff` CLI.

pub mod config;
pub mod datastore;
pub mod experiments;
pub mod heedful;
pub mod impair;
pub mod metrology;
pub mod tensornn;
pub mod waveform;

mod seeds;

pub use seeds::derive_seed;
