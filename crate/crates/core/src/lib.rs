//! Crop-transform-paste synthesis of visual-tracking training data.
//!
//! From one annotated frame per video, [`synthesis::synthesize`] produces
//! pseudo frames whose ground-truth boxes are known exactly. [`pairs`] turns
//! them into template/search training pairs and a JSONL manifest, and
//! [`tracker`] plus [`eval`] close the loop with a correlation-filter
//! baseline and OTB-style success/precision scoring.

pub mod commands;
pub mod config;
pub mod error;
pub mod eval;
mod fixed6;
pub mod geometry;
pub mod imaging;
pub mod otb;
pub mod pairs;
pub mod seed;
pub mod synthesis;
pub mod tracker;
pub mod toy;
pub mod transforms;

pub use error::{Error, Result};
pub use geometry::{AffineMap, BoundingBox};
pub use imaging::ImageBuffer;
pub use synthesis::{SequenceDataset, SynthesizedSample, TargetPatch};
pub use transforms::{SchedulePolicy, TransformChain, TransformKind, TransformParams};
