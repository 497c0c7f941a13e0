//! Dual teacher-student learning for semi-supervised segmentation at desk scale.
//!
//! Everything runs on the CPU in 64-bit floats so that every mathematical
//! component can be checked against brute-force oracles and central finite
//! differences. The crate is organized bottom-up:
//!
//! - [`tensor`] — dense tensors with reverse-mode automatic differentiation
//! - [`label`] — hard per-pixel class maps
//! - [`model`] — two miniature cross-architectural segmentation networks
//! - [`divergence`] — KL/JS fields, consistency masks, consensus label generation
//! - [`loss`] — supervised, semi-supervised, and uniform-regularization losses
//! - [`ema`] — exponential-moving-average teacher updates
//! - [`optim`] — adaptive-moment optimizer for the student parameters
//! - [`metrics`] — DSC / Jaccard / 95HD / ASD segmentation evaluation
//! - [`data`] — deterministic synthetic ring-and-blob segmentation corpus
//! - [`pgm`] — binary PGM image export for fields, masks, and snapshots
//! - [`config`] / [`train`] — training configuration and the full training loop

pub mod config;
pub mod data;
pub mod divergence;
pub mod ema;
pub mod label;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pgm;
pub mod tensor;
pub mod train;

use std::fmt;

pub use label::LabelMap;
pub use tensor::{Tape, Tensor, TensorError};

/// Crate-wide error for everything above the tensor layer.
#[derive(Debug)]
pub enum Error {
    /// Propagated from the autodiff core.
    Tensor(TensorError),
    /// Shape or dimension disagreement between domain objects.
    Shape(String),
    /// A value outside its documented domain (thresholds, weights, fractions).
    Domain(String),
    /// Invalid or inconsistent configuration.
    Config(String),
    /// Checkpoint serialization problems.
    Checkpoint(String),
    /// A loss became non-finite during training; diagnostics were dumped.
    NonFiniteLoss { iter: usize },
    /// Filesystem failure while writing run artifacts.
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Tensor(e) => write!(f, "tensor error: {e}"),
            Error::Shape(msg) => write!(f, "shape error: {msg}"),
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Checkpoint(msg) => write!(f, "checkpoint error: {msg}"),
            Error::NonFiniteLoss { iter } => {
                write!(f, "non-finite loss at iteration {iter}; diagnostics dumped")
            }
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<TensorError> for Error {
    fn from(e: TensorError) -> Self {
        Error::Tensor(e)
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Derive an independent sub-seed from a base seed and a purpose tag.
///
/// Splitmix64 finalizer; distinct tags give statistically independent streams,
/// so e.g. data generation and weight init never share randomness.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Format a float with 6 significant digits, the convention for every CSV
/// this crate writes. Plain notation inside a readable exponent range,
/// scientific outside it. Deterministic for identical inputs.
pub fn fmt_sig6(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let exp = v.abs().log10().floor() as i32;
    if !(-4..=8).contains(&exp) {
        format!("{v:.5e}")
    } else {
        let decimals = (5 - exp).max(0) as usize;
        format!("{v:.decimals$}")
    }
}
