//! Relation tuple extraction under zero cardinality.
//!
//! Builds NoZero / WithZero dataset settings, trains sentence-level
//! zero-cardinality classifiers and two reference joint extractors (cascade
//! binary tagging and a pointer-network decoder), runs end-to-end and
//! two-step pipelines, and scores them with exact or partial tuple matching.
//!
//! The numeric modules are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the scalar used for training.

pub mod corpus;
pub mod encoder;
pub mod error;
pub mod extractors;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod scalar;
pub mod seed;
pub mod train;
pub mod zerocard;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Encoder used for training and inference.
pub type Encoder = encoder::Encoder<f32>;
/// Zero-cardinality classifier used for training and inference.
pub type Classifier = zerocard::ZeroCardClassifier<f32>;
pub type CascadeExtractor = extractors::cascade::CascadeExtractor<f32>;
pub type PointerExtractor = extractors::pointer::PointerExtractor<f32>;

/// Double-precision variants, used for finite-difference checks.
pub type Encoder64 = encoder::Encoder<f64>;
pub type Classifier64 = zerocard::ZeroCardClassifier<f64>;
pub type CascadeExtractor64 = extractors::cascade::CascadeExtractor<f64>;
pub type PointerExtractor64 = extractors::pointer::PointerExtractor<f64>;
