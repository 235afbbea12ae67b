use crate::error::{Error, Result};

/// Voxel counts per axis plus the world-space box the lattice covers.
///
/// Voxels are cell-centered: voxel `i` along an axis covers
/// `[min + i*h, min + (i+1)*h]` with `h = (max - min) / n`, and its sample
/// point is the cell center. Linear indices are row-major with z fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct GridDims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub world_min: [f64; 3],
    pub world_max: [f64; 3],
}

impl GridDims {
    pub fn new(res: [usize; 3], world_min: [f64; 3], world_max: [f64; 3]) -> Result<Self> {
        if res.iter().any(|&n| n < 2) {
            return Err(Error::InvalidDims(format!("every axis needs at least 2 voxels, got {res:?}")));
        }
        if res.iter().any(|&n| n > u32::MAX as usize) || res.iter().product::<usize>() >= u32::MAX as usize {
            return Err(Error::InvalidDims(format!("grid {res:?} is too large")));
        }
        for a in 0..3 {
            if !(world_min[a].is_finite() && world_max[a].is_finite() && world_min[a] < world_max[a]) {
                return Err(Error::InvalidDims(format!(
                    "bounding box must satisfy min < max on every axis, got {world_min:?}..{world_max:?}"
                )));
            }
        }
        Ok(Self { nx: res[0], ny: res[1], nz: res[2], world_min, world_max })
    }

    /// `n³` voxels spanning `[-half_extent, half_extent]³`.
    pub fn cube(n: usize, half_extent: f64) -> Result<Self> {
        Self::new([n; 3], [-half_extent; 3], [half_extent; 3])
    }

    #[inline]
    pub fn res(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    /// Total number of lattice positions.
    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline(always)]
    pub fn linear(&self, c: [usize; 3]) -> usize {
        debug_assert!(c[0] < self.nx && c[1] < self.ny && c[2] < self.nz);
        (c[0] * self.ny + c[1]) * self.nz + c[2]
    }

    #[inline(always)]
    pub fn coord(&self, idx: usize) -> [usize; 3] {
        let k = idx % self.nz;
        let rest = idx / self.nz;
        [rest / self.ny, rest % self.ny, k]
    }

    pub fn voxel_size(&self) -> [f64; 3] {
        let r = self.res();
        std::array::from_fn(|a| (self.world_max[a] - self.world_min[a]) / r[a] as f64)
    }

    /// World-space center of voxel `c`.
    pub fn center(&self, c: [usize; 3]) -> [f64; 3] {
        let h = self.voxel_size();
        std::array::from_fn(|a| self.world_min[a] + (c[a] as f64 + 0.5) * h[a])
    }

    pub fn contains(&self, x: [f64; 3]) -> bool {
        (0..3).all(|a| x[a] >= self.world_min[a] && x[a] <= self.world_max[a])
    }

    /// True when both grids index the same lattice over the same box.
    pub fn same_lattice(&self, other: &GridDims) -> bool {
        self == other
    }

    /// Same box, different resolution.
    pub fn with_res(&self, res: [usize; 3]) -> Result<Self> {
        Self::new(res, self.world_min, self.world_max)
    }

    /// Twice the resolution on every axis.
    pub fn doubled(&self) -> Self {
        GridDims { nx: self.nx * 2, ny: self.ny * 2, nz: self.nz * 2, ..self.clone() }
    }

    /// Half the resolution, rounding up, never below 2 voxels per axis.
    pub fn halved(&self) -> Self {
        let h = |n: usize| n.div_ceil(2).max(2);
        GridDims { nx: h(self.nx), ny: h(self.ny), nz: h(self.nz), ..self.clone() }
    }

    /// Iterates over the 6-connected neighbours of `c` that lie inside the grid.
    pub fn neighbors6(&self, c: [usize; 3]) -> impl Iterator<Item = [usize; 3]> + '_ {
        const OFFS: [(usize, isize); 6] = [(0, -1), (0, 1), (1, -1), (1, 1), (2, -1), (2, 1)];
        let res = self.res();
        OFFS.iter().filter_map(move |&(axis, d)| {
            let v = c[axis] as isize + d;
            if v < 0 || v >= res[axis] as isize {
                None
            } else {
                let mut n = c;
                n[axis] = v as usize;
                Some(n)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_degenerate_axes_and_boxes() {
        assert!(GridDims::new([1, 4, 4], [0.0; 3], [1.0; 3]).is_err());
        assert!(GridDims::new([4, 4, 4], [0.0, 0.0, 1.0], [1.0; 3]).is_err());
        assert!(GridDims::new([4, 4, 4], [0.0; 3], [1.0, f64::NAN, 1.0]).is_err());
        assert!(GridDims::new([2, 2, 2], [0.0; 3], [1.0; 3]).is_ok());
    }

    #[test]
    fn linear_and_coord_are_inverse_with_z_fastest() {
        let d = GridDims::new([3, 4, 5], [0.0; 3], [1.0; 3]).unwrap();
        assert_eq!(d.linear([0, 0, 1]), 1);
        assert_eq!(d.linear([0, 1, 0]), 5);
        assert_eq!(d.linear([1, 0, 0]), 20);
        for idx in 0..d.len() {
            assert_eq!(d.linear(d.coord(idx)), idx);
        }
    }

    #[test]
    fn halved_rounds_up_and_keeps_two() {
        let d = GridDims::new([7, 2, 8], [0.0; 3], [1.0; 3]).unwrap();
        assert_eq!(d.halved().res(), [4, 2, 4]);
        assert_eq!(d.doubled().res(), [14, 4, 16]);
    }

    #[test]
    fn neighbors_clip_at_border() {
        let d = GridDims::cube(3, 1.0).unwrap();
        assert_eq!(d.neighbors6([0, 0, 0]).count(), 3);
        assert_eq!(d.neighbors6([1, 1, 1]).count(), 6);
    }
}
