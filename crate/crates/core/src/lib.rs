//! Unsupervised domain adaptation lab built around shuffle-augmented
//! feature mixup (SAF).
//!
//! The crate is organized bottom-up:
//!
//! - [`autodiff`]: dense `f64` tensors, a reverse-mode tape and the
//!   Nesterov SGD optimizer.
//! - [`nn`]: the extractor F, bottleneck B, classifier C, adversary D and
//!   SAF module M.
//! - [`losses`] and [`metrics`]: training losses and diagnostics
//!   (margins, margin disparity, entropy, H-divergence).
//! - [`mixup`]: pairing target features and mixing them with adaptive
//!   weights.
//! - [`data`]: synthetic shifted domains and CSV ingestion.
//! - [`train`]: configuration, schedules, the joint training step and the
//!   experiment runner.
//! - [`cli`]: the command implementations behind the `saf-lab` binary,
//!   plus PCA embedding export.

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod mixup;
pub mod nn;
pub mod train;

pub use error::{Error, Result};

/// Seeded generator used throughout the lab.
pub type LabRng = rand_chacha::ChaCha8Rng;
