//! Workbench for unseen-object amodal instance segmentation.
//!
//! The crate covers the whole loop at desk scale: procedurally generated
//! layered RGB-D scenes with exact amodal ground truth ([`scene`],
//! [`dataset`]), reference predictors ([`segment`]), Hungarian-matched
//! evaluation ([`metrics`]), a small hierarchical occlusion head trained with
//! hand-written backpropagation ([`hom`]), and occlusion-aware retrieval
//! planning ([`planner`]).

pub mod assignment;
pub mod dataset;
pub mod error;
pub mod hom;
pub mod image;
pub mod mask;
pub mod metrics;
pub mod planner;
pub mod render;
pub mod scene;
pub mod segment;

pub use error::{Error, Result};
pub use mask::{BBox, BinaryMask, InstanceAnnotation, MaskKind, RunLength};
pub use scene::{generate_scene, GenConfig, Scene, ShapeSpec};
pub use segment::{CorruptionConfig, PredictionSet};
