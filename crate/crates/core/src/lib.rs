//! Pedestrian risk event maps from georeferenced keyframes and binary
//! visual-question answers.
//!
//! The crate is organized along the pipeline:
//!
//! - [`catalog`]: the three-level conditional question hierarchy and per-image sessions.
//! - [`gateway`]: answer backends (recorded, mock oracle, remote HTTP) and answer normalization.
//! - [`risk`]: image risk, worst-case segment aggregation, risk categories.
//! - [`geo`]: OSM street graphs, map matching, the embedding store, and GeoJSON event maps.
//! - [`eval`]: metrics against human ground truth with conditional follow-up evaluation.
//! - [`pipeline`]: the `query`, `score`, `map`, and `eval` stages with their file formats.
//!
//! Runnable walkthroughs for each capability live in `examples/`.

pub mod catalog;
pub mod cli;
pub mod eval;
pub mod gateway;
pub mod geo;
pub mod io;
pub mod pipeline;
pub mod risk;

pub use catalog::{BinaryAnswer, HazardCategory, QuerySession, Question, QuestionCatalog};
pub use risk::{classify, image_risk, CategoryAnswers, RiskCategory, RiskScore, WeightConfig};
