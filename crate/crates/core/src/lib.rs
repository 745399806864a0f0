//! Knowledge-guided domain generalization for diabetic retinopathy grading.
//!
//! The crate covers the decision layer downstream of image models: a
//! clinical rule engine over lesion detections, symbolic learners over the
//! structured lesion/vein feature vector, confidence fusion with a deep
//! branch supplied as probability tables, metrics, a leave-domain-out
//! evaluation harness and a synthetic multi-domain data generator.

pub mod error;
pub mod fusion;
pub mod harness;
pub mod io;
pub mod learn;
pub mod metrics;
pub mod model;
pub mod rules;
pub mod synth;

pub use error::{ErrorClass, KgdgError, Result};
