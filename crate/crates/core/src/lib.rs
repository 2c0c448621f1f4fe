//! Guardrail-post detection on building facades: HOG sliding-window
//! detection (linear SVM or boosted cascade), floor-line filtering, and
//! spacing-plausibility selection, plus a synthetic facade generator and
//! the evaluation protocol.

pub mod classifiers;
pub mod config;
pub mod detector;
pub mod error;
pub mod eval;
pub mod floors;
pub mod geometry;
pub mod hog;
pub mod image;
pub mod io;
pub mod pipeline;
pub mod spacing;
pub mod synthgen;

pub use error::{Error, Result};
