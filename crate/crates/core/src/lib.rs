//! Open-vocabulary segmentation of 3D Gaussian scenes with a collaborative
//! pair of per-Gaussian fields.
//!
//! The pipeline has four stages, each with its own module:
//!
//! 1. [`rasterizer`] renders arbitrary per-Gaussian channel vectors with
//!    depth-sorted alpha blending and provides the exact transpose of that
//!    linear map for training.
//! 2. [`instance_field`] trains a low-dimensional instance feature on every
//!    Gaussian with a contrastive loss against 2D segment masks.
//! 3. [`ins2lang`] groups rendered instance features by segment, pairs them
//!    with the segment's language embedding and fits a mapping (kernel
//!    regression or a shallow MLP) that materializes a language feature on
//!    every Gaussian.
//! 4. [`inference`] turns a query embedding into a per-Gaussian relevance
//!    map and grows accepted regions through the instance field.
//!
//! [`eval`] scores results with 3D and rendered-2D IoU protocols and runs the
//! instance / language / collaborative ablation. [`scene`] holds the data
//! model, the synthetic ground-truth generator and the on-disk container.

pub mod config;
pub mod error;
pub mod eval;
pub mod inference;
pub mod ins2lang;
pub mod instance_field;
pub mod linalg;
pub mod optim;
pub mod pipeline;
pub mod ply;
pub mod rasterizer;
pub mod scene;

pub use error::{Error, Result};
pub use inference::{Query, RefinementResult, SimilarityThreshold};
pub use ins2lang::MappingFunction;
pub use rasterizer::{ChannelSelector, RasterConfig, RenderOutput, ViewRaster};
pub use scene::{Camera, Gaussian, GaussianScene, SceneSpec, ViewSupervision};
