//! Training methods that keep premise-hypothesis classifiers from leaning
//! on hypothesis-only artifacts.
//!
//! A classifier trained on pairs whose hypothesis side leaks the label
//! (say, a marker token that only appears on entailed examples) will happily
//! read the leak and ignore the premise. This crate implements two
//! probabilistic counters to that, alongside the plain discriminative
//! baseline:
//!
//! * an adversarial hypothesis-only head trained through a gradient
//!   reversal layer, and
//! * negative premise sampling with gradient blocking and shared
//!   classifier weights.
//!
//! plus the synthetic-bias experiment, sweep harness, and probes that show
//! the methods working.
//!
//! Everything runs on a small reverse-mode autodiff tape ([`tape`]) in
//! 64-bit floats, checked end to end against central differences.
//!
//! See the `examples/` directory for runnable entry points, one per
//! capability (`cargo run -p debias-nli --example synthetic_bias`, etc.),
//! or the `debias-nli` binary for the scriptable CLI.

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod model;
pub mod synthetic;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod vocab;

pub use error::{Error, Result};
