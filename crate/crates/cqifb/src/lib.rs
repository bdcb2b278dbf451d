//! Subcarrier-level CQI feedback toolkit.
//!
//! The crate simulates an OFDM MIMO downlink at per-subcarrier resolution and
//! implements the full CQI feedback chain on top of it:
//!
//! * [`channel`] draws frequency-selective MIMO channel realizations from a
//!   tapped-delay-line profile, selects subband precoders from a DFT
//!   codebook, and computes per-subcarrier SNR.
//! * [`link`] holds the CQI/MCS table and parametric BLER curves, selects
//!   CQI at subband (via effective-SNR mapping) and subcarrier granularity,
//!   codes subband CQI as wideband-plus-offset reports, and scores schemes
//!   by classification error and effective rate.
//! * [`nn`] is a small dense-network engine (batch norm, dropout, LeakyReLU,
//!   sigmoid, straight-through quantization, Adam) used by the learned
//!   feedback schemes.
//! * [`cqinet`] compresses full per-subcarrier CQI through a quantized
//!   autoencoder; [`sr`] reconstructs it from sparse pilot measurements and
//!   provides the linear-interpolation baseline.
//! * [`dataio`] generates datasets, splits them deterministically, and
//!   persists datasets and model bundles; [`config`] is the JSON front door;
//!   [`cli`] wires everything into the `cqifb` binary.

pub mod channel;
pub mod cli;
pub mod config;
pub mod cqinet;
pub mod dataio;
pub mod error;
pub mod link;
pub mod nn;
pub mod sr;
pub mod util;

pub use error::{Error, Result};
