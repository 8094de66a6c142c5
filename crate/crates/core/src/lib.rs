//! Complexity scoring, filtering, dynamic-resolution tile planning and
//! curriculum construction for vision-language training corpora.
//!
//! The crate works on JSON-lines dataset manifests plus optional sidecar
//! annotations carrying model-derived values (perplexity, OCR token counts,
//! object counts, per-tier losses, judge verdicts). Nothing here runs a
//! neural network; model outputs arrive through the [`oracle`] traits.

pub mod cli;
pub mod curriculum;
pub mod error;
pub mod filterbank;
pub mod imagestats;
pub mod manifest;
pub mod oracle;
pub mod scoring;
pub mod taskgap;
pub mod textstats;
pub mod tileplan;

pub use error::{Error, Result};
pub use manifest::{AnnotationSet, DatasetManifest, ImageRef, JudgeVerdict, Sample, TaskCategory};
