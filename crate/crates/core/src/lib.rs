//! Streaming free-viewpoint video on explicit sparse voxel grids.
//!
//! A base model is trained on the first frame; every later frame tunes a
//! narrow band around the previous geometry, gated by a half-resolution pilot
//! model, and is stored as a compressed difference against its predecessor.

pub mod band;
mod bytes;
pub mod codec;
pub mod config;
pub mod dataset;
pub mod error;
pub mod grid;
pub mod image;
pub mod pilot;
pub mod pipeline;
pub mod render;
pub mod scalar;
pub mod sh;
pub mod trainer;

pub use codec::{apply_delta, delta_stats, encode_delta, DeltaParams, DeltaStats, DiffMasks, FrameDelta};
pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use grid::{GridDims, OccupancyMask, SparseGrid, Voxel};
pub use image::{psnr, Image};
pub use pipeline::{replay, stream_step, train_base, StepOutput};
pub use render::{render_image, Camera, Ray, RenderOptions};
pub use scalar::Real;
pub use trainer::{TrainConfig, TrainableSet};

pub type GridF32 = SparseGrid<f32>;
pub type GridF64 = SparseGrid<f64>;
pub type VoxelF32 = Voxel<f32>;
pub type CameraF32 = Camera<f32>;
pub type ImageF32 = Image<f32>;
