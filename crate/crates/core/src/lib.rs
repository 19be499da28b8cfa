//! OAMP-based MIMO detection and its deep-unfolded variant, OAMP-Net.
//!
//! The crate is organized bottom-up:
//!
//! * [`model`] generates channels, symbols and noise and converts between
//!   complex and real-valued representations.
//! * [`constellation`] holds the real QAM alphabet, Gray labels and the
//!   elementwise posterior-mean denoiser.
//! * [`detectors`] implements OAMP, the OAMP-Net forward pass, linear
//!   baselines and exhaustive-enumeration references.
//! * [`training`] fits the per-layer scalars with Adam.
//! * [`harness`] runs BER sweeps and diagnostics and exports reports; [`cli`]
//!   wraps it in a command-line interface.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod constellation;
pub mod detectors;
mod error;
pub mod harness;
pub mod model;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
