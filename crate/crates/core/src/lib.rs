//! Calibration evaluation for multi-class object detectors.
//!
//! The crate follows a three-step flow. Raw prediction dumps are optionally
//! post-processed ([`postprocess`]), matched against ground truth to build an
//! evaluation set ([`matching`]), and scored ([`metrics`]). Around that core
//! sit parsers ([`ingest`]), a synthetic scenario generator with known
//! calibration ([`synth`]), post-hoc probability transforms ([`recal`]) and
//! plain-text renderers ([`report`]).
//!
//! Class indices are 0-based; with `K` object classes the background class is
//! index `K`, so every probability vector has `K + 1` entries.

pub mod error;
pub mod ingest;
pub mod matching;
pub mod metrics;
pub mod postprocess;
pub mod recal;
pub mod report;
pub mod synth;
pub mod types;

mod par;

pub use error::{Error, Result};
pub use types::{
    iou, BBox, ClassIndex, Detection, EvaluationRecord, EvaluationSet, GroundTruth, ImageId,
    ProbVector, RecordKind,
};
