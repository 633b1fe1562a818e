//! Shadow-model membership inference at desk scale.
//!
//! The crate is organised bottom-up:
//!
//! * [`nn`] — small multilayer perceptrons with exact parameter and input
//!   gradients, the attack objectives, and an Adam optimizer.
//! * [`training`] — even dataset splits and mini-batch training, optionally
//!   with per-example clipping and Gaussian noise (DP-SGD style).
//! * [`farm`] — farms of shadow models, the held-out black-box target oracle,
//!   and the binary farm store.
//! * [`attacks`] — LiRA scoring (online/offline), the canary query optimizer,
//!   the random-noise control, and the end-to-end attack driver.
//! * [`eval`] — ROC curves, AUC, TPR at a fixed FPR, and multi-seed aggregates.

pub mod attacks;
pub mod data;
pub mod error;
pub mod eval;
pub mod farm;
pub mod nn;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
