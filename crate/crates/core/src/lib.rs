//! Unsupervised feature learning for wireless spectrum data.
//!
//! The crate turns power-spectral-density recordings into normalized
//! spectrogram tiles ([`ingest`]), learns reduced representations of them
//! either with a flattening + PCA baseline ([`pca`]) or with a residual CNN
//! trained on its own k-means pseudo-labels ([`cnn`], [`kmeans`],
//! [`deepcluster`]), and scores the resulting feature spaces ([`eval`]).
//! The [`cli`] module drives the whole pipeline from the command line and
//! writes every artifact under a run directory.

pub mod cli;
pub mod cnn;
pub mod deepcluster;
mod error;
pub mod eval;
pub mod features;
pub mod ingest;
pub mod kmeans;
pub mod pca;
pub mod report;
pub mod rng;

pub use error::{Error, Result};
pub use features::FeatureMatrix;
