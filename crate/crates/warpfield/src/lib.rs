//! Time-varying implicit 3D reconstruction of deforming scenes from a
//! single fixed, calibrated monocular video.
//!
//! The pipeline learns two neural fields from RGB frames, binary masks and
//! precomputed relative depth maps: a time-conditioned deformation field
//! emitting per-point SE(3) screw axes, and a canonical radiance field
//! queried at the warped points. Differentiable volume rendering ties the
//! fields to the observations through photometric, depth, elastic and
//! temporal regularization losses.
//!
//! Modules follow the pipeline stages:
//!
//! - [`se3`]: closed-form screw-axis exponential map, point warps, Jacobians
//! - [`sampling`]: pinhole rays, mask-aware patch batching, depth-guided samples
//! - [`fields`]: positional encoding and the two trainable fields
//! - [`render`]: transmittance compositing of color, depth and weights
//! - [`objective`]: the six loss terms and their weighted total
//! - [`pipeline`]: dataset ingestion, training loop, checkpoints
//! - [`evalkit`]: metrics, novel-view rendering, synthetic scene generation

pub mod error;
pub mod evalkit;
pub mod fields;
pub mod num;
pub mod objective;
pub mod pipeline;
pub mod render;
pub mod sampling;
pub mod se3;

pub use error::{Error, Result};
