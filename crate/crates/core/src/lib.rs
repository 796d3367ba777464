//! Numeric substrate of the smoke early-warning pipeline: box geometry, dataset
//! preparation and detection-quality metrics.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod image;

pub use error::{DatasetError, EvalError, GeometryError, ImageError};
pub use geometry::{iou, nms, BoxXYXY, Detection, LetterboxTransform, YoloBox};
pub use image::Image;
