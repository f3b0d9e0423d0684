//! Core of the axis-prompt toolkit.
//!
//! Everything in this crate is pure computation over in-memory values and
//! builds without `std` (only `alloc` is required):
//!
//! - [`geometry`]: vectors, coordinate frames with explicit handedness, and the
//!   pinhole camera.
//! - [`raster`] and [`font`]: a tiny RGB raster with hard-edged line, disk,
//!   polygon and bitmap-text drawing.
//! - [`overlay`]: the scaled coordinate-frame mark (axes, ticks, numeric
//!   labels) and keypoint markers.
//! - [`scene`]: parametric cuboid furniture, camera placement and flat-shaded
//!   view rendering used as a synthetic dataset.
//! - [`tasks`]: prompt templates and construction of reconstruction, matching
//!   and detection task instances.
//! - [`answer`]: free-text answer parsers and oracle answer formatting.
//! - [`eval`]: scoring, 3D IoU, aggregation and table rendering.
//!
//! File formats, PNG encoding, model backends, the run driver, the annotation
//! service and the CLI live in the `axisprompt` crate.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod answer;
pub mod eval;
pub mod font;
pub mod geometry;
pub mod overlay;
pub mod raster;
pub mod scene;
pub mod tasks;

pub use geometry::{CameraModel, CoordinateFrame, GeometryError, Handedness, Mat3, Pixel, Vec3};
pub use raster::{Rgb, RgbImage};
