//! Environment-semantics aided mmWave beam and blockage prediction on a
//! synthetic street canyon.
//!
//! The crate simulates traffic, renders per-camera semantic label maps,
//! traces multipath channels with the image method, labels optimal DFT beams
//! and future blockage, and trains small predictors whose input features are
//! chosen by sequential floating forward selection.

// negated comparisons are used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod beams;
pub mod camera;
pub mod channel;
pub mod dataset;
pub mod featsel;
pub mod features;
pub mod geometry;
pub mod pipeline;
pub mod predictor;
pub mod rng;
pub mod scene;
pub mod semantics;
