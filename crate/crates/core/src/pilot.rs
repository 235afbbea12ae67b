//! Pilot-model guidance: a half-resolution model whose change masks decide
//! which full-resolution voxels are tuned.

use rand::Rng;

use crate::codec::DiffMasks;
use crate::error::{Error, Result};
use crate::grid::{children, GridDims, OccupancyMask, SparseGrid};
use crate::render::RenderOptions;
use crate::scalar::Real;
use crate::trainer::{train, RayBatch, TrainConfig, TrainReport, TrainableSet};

/// The ×½ pilot of `grid`.
pub fn make_pilot<T: Real>(grid: &SparseGrid<T>) -> SparseGrid<T> {
    grid.downsample()
}

/// Replicates every set pilot voxel to its (clipped) 2×2×2 block of `full`.
pub fn replicate_mask(pilot: &OccupancyMask, full: &GridDims) -> Result<OccupancyMask> {
    if pilot.dims().res() != full.halved().res() {
        return Err(Error::DimsMismatch(format!("pilot {:?} is not the half of {:?}", pilot.dims().res(), full.res())));
    }
    let pd = pilot.dims();
    let res = full.res();
    let mut out = OccupancyMask::empty(full);
    for idx in pilot.iter_ones() {
        for c in children(pd.coord(idx), res) {
            out.set_at(c, true);
        }
    }
    Ok(out)
}

/// `G = ↑(m_add ∨ m_erase ∨ m_remain)` with nearest-neighbour replication.
pub fn guidance_mask(pilot_masks: &DiffMasks, full_dims: &GridDims) -> Result<OccupancyMask> {
    replicate_mask(&pilot_masks.merged(), full_dims)
}

/// Copies pilot adds into unoccupied full-resolution children and removes the
/// children of pilot erases. Occupied full voxels are never overwritten.
pub fn fill_back<T: Real>(
    grid_full: &SparseGrid<T>,
    pilot_next: &SparseGrid<T>,
    pilot_masks: &DiffMasks,
) -> Result<SparseGrid<T>> {
    let full = grid_full.dims();
    if pilot_next.dims().res() != full.halved().res() {
        return Err(Error::DimsMismatch(format!(
            "pilot {:?} is not the half of {:?}",
            pilot_next.dims().res(),
            full.res()
        )));
    }
    let erase = replicate_mask(&pilot_masks.m_erase, full)?;
    let mut source = vec![u32::MAX; full.len()];
    let pd = pilot_next.dims();
    for idx in pilot_masks.m_add.iter_ones() {
        let Some(slot) = pilot_next.slot(idx) else {
            return Err(Error::Corrupt("pilot add mask covers an empty pilot voxel".into()));
        };
        for c in children(pd.coord(idx), full.res()) {
            let i = full.linear(c);
            if !grid_full.mask().get(i) {
                source[i] = slot as u32;
            }
        }
    }
    let created = OccupancyMask::from_indices(full, (0..full.len()).filter(|&i| source[i] != u32::MAX));
    let occ = grid_full.mask().and_not(&erase).or(&created);
    let pv = pilot_next.voxels();
    Ok(grid_full.with_occupancy(&occ, |i| pv[source[i] as usize]))
}

/// Trains only `guidance ∩ occupancy`; returns the trainable set used.
pub fn guided_tune<T: Real, R: Rng + ?Sized>(
    grid_full: &mut SparseGrid<T>,
    pool: &RayBatch<T>,
    guidance: &OccupancyMask,
    cfg: &TrainConfig,
    opts: &RenderOptions<T>,
    rng: &mut R,
) -> Result<(TrainableSet, TrainReport)> {
    if guidance.dims().res() != grid_full.dims().res() {
        return Err(Error::DimsMismatch(format!(
            "guidance {:?} vs grid {:?}",
            guidance.dims().res(),
            grid_full.dims().res()
        )));
    }
    let trainable = TrainableSet::restricted(grid_full, guidance);
    let report = train(grid_full, pool, &trainable, cfg, opts, rng)?;
    Ok((trainable, report))
}
