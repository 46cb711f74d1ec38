//! Kernel-fusion toolkit for multi-axis time-series classification.
//!
//! The pipeline builds three base similarity kernels over labeled frames
//! (Gaussian over statistical features, histogram-intersection over
//! time-delay-embedding shape descriptors, shift-tolerant correlation),
//! expands them into all sum-composition kernels, turns every kernel's
//! similarity columns into dense PCA embeddings, trains one feedforward
//! tower per kernel and fuses the learned representations in a softmax
//! classifier regularized by kernel dropout.
//!
//! Modules follow the pipeline stages:
//!
//! * [`ingest`] — frame CSV loading and deterministic splits
//! * [`features`] — statistics, delay embeddings, shape histograms
//! * [`kernels`] — Gram construction, PSD correction, compositions
//! * [`linalg`] — Jacobi eigensolver and PCA
//! * [`embedding`] — kernel columns → dense embeddings
//! * [`net`] — dense/batch-norm/dropout layers, backprop, Adam
//! * [`fusion`] — towers, kernel dropout, training, evaluation, ablations
//! * [`pipeline`] — orchestration, checkpoints, report files
//! * [`synth`] — deterministic synthetic dataset for tests and demos

pub mod embedding;
pub mod error;
pub mod features;
pub mod fusion;
pub mod ingest;
pub mod kernels;
pub mod linalg;
pub mod net;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};
