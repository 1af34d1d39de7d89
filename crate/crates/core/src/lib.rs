//! Engagement recognition from face images.
//!
//! The crate covers the whole pipeline: ingesting FER-2013 and engagement
//! manifests, the two-dimension annotation protocol (label combination,
//! majority vote, Fleiss' kappa) and its HTTP collection service, face
//! standardization and normalization, the small CNN / VGG-style networks with
//! transfer initialization, the HOG+SVM baseline, SGD training with
//! exponential learning-rate decay, and the evaluation metrics.

pub mod annotation;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod models;
pub mod preprocess;
pub mod service;
pub mod training;

pub use error::{Error, Result};
