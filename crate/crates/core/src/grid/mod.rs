//! Explicit sparse voxel grid: occupancy, storage, trilinear sampling and resampling.

mod checkpoint;
mod dims;
mod mask;
mod sparse;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub(crate) use checkpoint::{put_dims, read_res};
pub use dims::GridDims;
pub use mask::OccupancyMask;
pub(crate) use sparse::is_slot;
pub use sparse::{children, SparseGrid, Stencil, Voxel, VOXEL_SCALARS};
