//! COBRA: a desk-scale deep active contour engine.
//!
//! The engine delineates a boundary polyline in a single-channel image by
//! iteratively refining a vertex sequence: a small convolutional backbone
//! extracts a feature map, and a recurrent snake head samples the features at
//! the current vertices and predicts per-vertex offsets through a stack of
//! dilated 1-D convolutions. Training uses configurable contour losses (L1,
//! L2, DTW, SoftDTW) with optional deep supervision; evaluation uses the
//! Polis polyline distance and MC-dropout uncertainty scores.

pub mod data;
pub mod error;
pub mod geometry;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod par;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
