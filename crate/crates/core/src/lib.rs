//! Core engine for text-guided Bézier sketch ideation.
//!
//! The pipeline renders trainable strokes, composites them over a frozen
//! condition sketch, augments the result, asks a guidance backend for a
//! score-distillation gradient and pushes it back to the control points
//! with Adam. [`session`] layers multi-round storyboards on top.

pub mod augment;
pub mod guidance;
pub mod optimize;
pub mod quickdraw;
pub mod raster;
pub mod rng;
pub mod session;
pub mod sketch;
pub mod svg;

pub use raster::{compose_ink, RasterImage, Rasterizer};
pub use rng::SketchRng;
pub use sketch::{ControlPoint, Sketch, Stroke};
