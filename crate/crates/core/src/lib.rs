//! Temporal action proposal generation.
//!
//! The pipeline windows per-snippet video features, predicts start/end
//! boundary heatmaps with a nested encoder-decoder, scores every dense
//! proposal with a relation block, suppresses redundant proposals and scores
//! the result with temporal-IoU mAP.

pub mod boundary;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod grid;
pub mod kernels;
pub mod model;
pub mod postprocess;
pub mod relation;
pub mod segment;
pub mod training;

pub use error::{Error, Result};
pub use grid::ProposalGrid;
pub use kernels::Matrix2D;
pub use segment::{tiou, Segment};
