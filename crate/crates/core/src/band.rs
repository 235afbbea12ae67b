//! Binary morphology on occupancy masks and the per-frame narrow band.

use crate::error::{Error, Result};
use crate::grid::{OccupancyMask, SparseGrid, Voxel};
use crate::scalar::Real;
use crate::trainer::TrainableSet;

#[derive(Clone, Copy, PartialEq)]
enum Op {
    Dilate,
    Erode,
}

/// Separable cube structuring element: one sliding window per axis.
fn morph(mask: &OccupancyMask, radius: usize, op: Op) -> OccupancyMask {
    if radius == 0 {
        return mask.clone();
    }
    let dims = mask.dims();
    let res = dims.res();
    let mut buf = vec![false; dims.len()];
    for idx in mask.iter_ones() {
        buf[idx] = true;
    }
    let stride = [res[1] * res[2], res[2], 1];
    let mut line = Vec::new();
    let mut prefix = Vec::new();
    for axis in 0..3 {
        let n = res[axis];
        let (a, b) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        for i in 0..res[a] {
            for j in 0..res[b] {
                let base = i * stride[a] + j * stride[b];
                line.clear();
                line.extend((0..n).map(|k| buf[base + k * stride[axis]]));
                prefix.clear();
                prefix.push(0usize);
                for &v in &line {
                    prefix.push(prefix.last().unwrap() + v as usize);
                }
                for k in 0..n {
                    let lo = k.saturating_sub(radius);
                    let hi = (k + radius).min(n - 1);
                    let count = prefix[hi + 1] - prefix[lo];
                    buf[base + k * stride[axis]] = match op {
                        Op::Dilate => count > 0,
                        Op::Erode => k >= radius && k + radius < n && count == 2 * radius + 1,
                    };
                }
            }
        }
    }
    OccupancyMask::from_indices(dims, buf.iter().enumerate().filter(|(_, &v)| v).map(|(i, _)| i))
}

/// Set where any voxel within Chebyshev distance `radius` is set; clipped at the border.
pub fn dilate(mask: &OccupancyMask, radius: usize) -> OccupancyMask {
    morph(mask, radius, Op::Dilate)
}

/// Set where every voxel within Chebyshev distance `radius` is set; the
/// outside of the volume counts as unset.
pub fn erode(mask: &OccupancyMask, radius: usize) -> OccupancyMask {
    morph(mask, radius, Op::Erode)
}

/// `dilate(m, rho_d) XOR erode(m, rho_e)`: the shell around the surface of `m`.
pub fn compute_band(mask_prev: &OccupancyMask, rho_d: usize, rho_e: usize) -> OccupancyMask {
    dilate(mask_prev, rho_d).xor(&erode(mask_prev, rho_e))
}

/// Occupies every band voxel (new ones start at zero) and makes the band trainable.
pub fn activate_band<T: Real>(grid: &SparseGrid<T>, band: &OccupancyMask) -> Result<(SparseGrid<T>, TrainableSet)> {
    if band.dims().res() != grid.dims().res() {
        return Err(Error::DimsMismatch(format!("band {:?} vs grid {:?}", band.dims().res(), grid.dims().res())));
    }
    let occ = grid.mask().or(band);
    let next = grid.with_occupancy(&occ, |_| Voxel::zero());
    let trainable = TrainableSet::new(&next, band.and(next.mask()))?;
    Ok((next, trainable))
}
