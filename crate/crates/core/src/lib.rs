//! Detector-agnostic multi-object tracking over precomputed detections.
//!
//! The crate associates per-frame detections (boxes, confidences, optional
//! appearance embeddings) into identity-stable tracks using a four-round
//! gated hybrid matcher, one-to-many assignment for crowded tracks, and
//! angle-plus-appearance restoration of tracks lost at the image border.
//! It also ships a HOTA/CLEAR/IDF1 evaluator, MOTChallenge-compatible file
//! I/O, and a deterministic synthetic scenario generator used by the test
//! suite and the CLI.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root pin the common concrete choices.

pub mod assignment;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod matcher;
pub mod mot_io;
pub mod motion;
pub mod scalar;
pub mod synth;
pub mod track;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// `f64` box.
pub type BBox64 = geometry::BBox<f64>;
/// `f32` box.
pub type BBox32 = geometry::BBox<f32>;
/// `f64` cost matrix.
pub type CostMatrix64 = geometry::CostMatrix<f64>;
/// `f32` cost matrix.
pub type CostMatrix32 = geometry::CostMatrix<f32>;
/// `f64` detection.
pub type Detection64 = matcher::Detection<f64>;
/// `f32` detection.
pub type Detection32 = matcher::Detection<f32>;
/// `f64` tracker configuration.
pub type TrackerConfig64 = track::TrackerConfig<f64>;
/// `f32` tracker configuration.
pub type TrackerConfig32 = track::TrackerConfig<f32>;
/// `f64` tracking session.
pub type SportsTracker64 = matcher::SportsTracker<f64>;
/// `f32` tracking session.
pub type SportsTracker32 = matcher::SportsTracker<f32>;
