//! Discriminative entropy clustering for softmax models.
//!
//! The crate is organised bottom-up:
//!
//! * [`simplex`] holds probability vectors and the information measures every loss is built on.
//! * [`model`] is the softmax classifier (linear, or with one ReLU hidden layer) with backprop.
//! * [`losses`] implements the loss family and its gradients with respect to logits.
//! * [`solvers`] contains the pseudo-label solvers: closed-form EM, projected Newton and
//!   entropic mirror descent.
//! * [`trainer`] runs the alternating self-labeling loop and the gradient-only baselines.
//! * [`kmeans`], [`data`], [`eval`] and [`viz`] are the baseline, datasets, metrics and SVG output.
//! * [`config`] and [`cli`] wire everything into reproducible experiment runs.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod kmeans;
pub mod losses;
pub mod model;
pub mod simplex;
pub mod solvers;
pub mod trainer;
pub mod viz;

pub use error::{Error, Result};
