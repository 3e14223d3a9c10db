pub mod ablation;
pub mod affine;
pub mod camera;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod llm;
pub mod mask;
pub mod metrics;
pub mod occlusion;
pub mod overlay;
pub mod perception;
pub mod pipeline;
pub mod pose;
pub mod query;
pub mod reasoner;
pub mod sim;
pub mod tracking;

pub use error::{Error, Result};
pub use geometry::{box_centroid, box_iou, Box2D, Point2D};
pub use mask::{mask_iou, translate_mask, BinaryMask, MaskSequence};
