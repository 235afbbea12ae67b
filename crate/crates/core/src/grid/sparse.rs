use super::{GridDims, OccupancyMask};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::sh::SH_COEFFS;

/// Number of scalars stored per voxel: opacity followed by 27 SH coefficients.
pub const VOXEL_SCALARS: usize = 1 + SH_COEFFS;

const NO_SLOT: u32 = u32::MAX;

/// Raw parameters of one occupied voxel.
///
/// `sigma` is the pre-activation opacity (activated by clamping at zero).
/// `sh` is channel-major: `sh[c * 9 + k]` is basis function `k` of channel `c`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Voxel<T> {
    pub sigma: T,
    pub sh: [T; SH_COEFFS],
}

impl<T: Real> Voxel<T> {
    pub fn zero() -> Self {
        Self { sigma: T::zero(), sh: [T::zero(); SH_COEFFS] }
    }

    pub fn new(sigma: T, sh: [T; SH_COEFFS]) -> Self {
        Self { sigma, sh }
    }

    /// Opacity with the ReLU activation applied.
    #[inline]
    pub fn density(&self) -> T {
        self.sigma.max(T::zero())
    }

    /// `[sigma, sh...]`, the on-disk order.
    pub fn to_array(&self) -> [T; VOXEL_SCALARS] {
        let mut out = [T::zero(); VOXEL_SCALARS];
        out[0] = self.sigma;
        out[1..].copy_from_slice(&self.sh);
        out
    }

    pub fn from_array(v: &[T; VOXEL_SCALARS]) -> Self {
        let mut sh = [T::zero(); SH_COEFFS];
        sh.copy_from_slice(&v[1..]);
        Self { sigma: v[0], sh }
    }

    pub fn cast<U: Real>(&self) -> Voxel<U> {
        Voxel {
            sigma: U::lit(self.sigma.to_f64().unwrap_or(0.0)),
            sh: self.sh.map(|x| U::lit(x.to_f64().unwrap_or(0.0))),
        }
    }
}

/// Precomputed world-to-lattice transform in the grid's scalar type.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Lattice<T> {
    min: [T; 3],
    inv_h: [T; 3],
    upper: [T; 3],
}

impl<T: Real> Lattice<T> {
    fn new(dims: &GridDims) -> Self {
        let h = dims.voxel_size();
        let res = dims.res();
        Self {
            min: dims.world_min.map(T::lit),
            inv_h: h.map(|h| T::lit(1.0 / h)),
            upper: res.map(|n| T::lit((n - 1) as f64)),
        }
    }
}

/// The 8 lattice corners surrounding a sample point and their trilinear weights.
///
/// Corner `c` sits at offset `(c >> 2 & 1, c >> 1 & 1, c & 1)` from the lower
/// corner. At the border both corners of an axis may coincide; the upper one
/// then carries zero weight.
#[derive(Clone, Copy, Debug)]
pub struct Stencil<T> {
    pub(crate) slots: [u32; 8],
    pub(crate) weights: [T; 8],
    pub(crate) frac: [T; 3],
}

impl<T: Real> Stencil<T> {
    /// Storage slot of each corner, `None` where the corner is unoccupied.
    pub fn slots(&self) -> [Option<usize>; 8] {
        self.slots.map(|s| (s != NO_SLOT).then_some(s as usize))
    }

    pub fn weights(&self) -> &[T; 8] {
        &self.weights
    }

    #[inline(always)]
    pub fn any_occupied(&self) -> bool {
        self.slots.iter().any(|&s| s != NO_SLOT)
    }

    #[inline(always)]
    pub(crate) fn raw_slots(&self) -> &[u32; 8] {
        &self.slots
    }
}

#[inline(always)]
pub(crate) fn is_slot(s: u32) -> bool {
    s != NO_SLOT
}

/// Sparse voxel grid: occupancy mask plus contiguous per-voxel storage.
///
/// `voxels[k]` belongs to the `k`-th set bit of `mask` in linear order, and
/// `slots[idx]` maps a linear index to its storage slot.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseGrid<T> {
    dims: GridDims,
    mask: OccupancyMask,
    voxels: Vec<Voxel<T>>,
    slots: Vec<u32>,
    lattice: Lattice<T>,
}

impl<T: Real> SparseGrid<T> {
    pub fn empty(dims: &GridDims) -> Self {
        Self {
            mask: OccupancyMask::empty(dims),
            voxels: Vec::new(),
            slots: vec![NO_SLOT; dims.len()],
            lattice: Lattice::new(dims),
            dims: dims.clone(),
        }
    }

    /// Every voxel occupied with the same value.
    pub fn filled(dims: &GridDims, v: Voxel<T>) -> Self {
        Self::from_fn(dims, |_| Some(v))
    }

    pub fn from_fn(dims: &GridDims, mut f: impl FnMut([usize; 3]) -> Option<Voxel<T>>) -> Self {
        let mut mask = OccupancyMask::empty(dims);
        let mut voxels = Vec::new();
        for idx in 0..dims.len() {
            if let Some(v) = f(dims.coord(idx)) {
                mask.set(idx, true);
                voxels.push(v);
            }
        }
        Self::assemble(mask, voxels)
    }

    /// Builds a grid from a mask and values listed in mask-iteration order.
    pub fn from_parts(mask: OccupancyMask, voxels: Vec<Voxel<T>>) -> Result<Self> {
        if mask.count() != voxels.len() {
            return Err(Error::Corrupt(format!(
                "mask has {} occupied voxels but {} values were supplied",
                mask.count(),
                voxels.len()
            )));
        }
        Ok(Self::assemble(mask, voxels))
    }

    fn assemble(mask: OccupancyMask, voxels: Vec<Voxel<T>>) -> Self {
        let dims = mask.dims().clone();
        let mut slots = vec![NO_SLOT; dims.len()];
        for (slot, idx) in mask.iter_ones().enumerate() {
            slots[idx] = slot as u32;
        }
        Self { lattice: Lattice::new(&dims), dims, mask, voxels, slots }
    }

    #[inline]
    pub fn dims(&self) -> &GridDims {
        &self.dims
    }

    #[inline]
    pub fn mask(&self) -> &OccupancyMask {
        &self.mask
    }

    /// Number of occupied voxels.
    #[inline]
    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    /// Voxel values in mask-iteration order.
    #[inline]
    pub fn voxels(&self) -> &[Voxel<T>] {
        &self.voxels
    }

    /// Mutable values; the occupancy structure stays fixed.
    #[inline]
    pub fn voxels_mut(&mut self) -> &mut [Voxel<T>] {
        &mut self.voxels
    }

    #[inline(always)]
    pub fn slot(&self, idx: usize) -> Option<usize> {
        let s = self.slots[idx];
        is_slot(s).then_some(s as usize)
    }

    pub fn get(&self, c: [usize; 3]) -> Option<&Voxel<T>> {
        self.get_idx(self.dims.linear(c))
    }

    pub fn get_idx(&self, idx: usize) -> Option<&Voxel<T>> {
        self.slot(idx).map(|s| &self.voxels[s])
    }

    pub fn get_mut(&mut self, c: [usize; 3]) -> Option<&mut Voxel<T>> {
        let idx = self.dims.linear(c);
        self.slot(idx).map(move |s| &mut self.voxels[s])
    }

    /// Writes `v` at `c`, occupying the voxel if needed.
    ///
    /// Occupying a new voxel rebuilds storage (O(n)); use [`Self::with_occupancy`]
    /// for bulk changes.
    pub fn set(&mut self, c: [usize; 3], v: Voxel<T>) {
        if let Some(slot) = self.get_mut(c) {
            *slot = v;
            return;
        }
        let idx = self.dims.linear(c);
        let mut mask = self.mask.clone();
        mask.set(idx, true);
        *self = self.with_occupancy(&mask, |_| v);
    }

    /// Iterates `(linear index, voxel)` in mask order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &Voxel<T>)> + '_ {
        self.mask.iter_ones().zip(self.voxels.iter())
    }

    /// A grid with occupancy `mask`: voxels occupied in both keep their values,
    /// newly occupied ones are initialized by `init(linear index)`.
    pub fn with_occupancy(&self, mask: &OccupancyMask, mut init: impl FnMut(usize) -> Voxel<T>) -> Self {
        assert_eq!(mask.dims().res(), self.dims.res(), "occupancy shape mismatch");
        let voxels = mask
            .iter_ones()
            .map(|idx| match self.slot(idx) {
                Some(s) => self.voxels[s],
                None => init(idx),
            })
            .collect();
        let mask = if mask.dims() == &self.dims {
            mask.clone()
        } else {
            OccupancyMask::from_indices(&self.dims, mask.iter_ones())
        };
        Self::assemble(mask, voxels)
    }

    /// Keeps only voxels for which `keep(linear index, voxel)` holds; survivors are bit-identical.
    pub fn retain(&self, mut keep: impl FnMut(usize, &Voxel<T>) -> bool) -> Self {
        let mut mask = OccupancyMask::empty(&self.dims);
        let mut voxels = Vec::with_capacity(self.voxels.len());
        for (idx, v) in self.iter() {
            if keep(idx, v) {
                mask.set(idx, true);
                voxels.push(*v);
            }
        }
        Self::assemble(mask, voxels)
    }

    pub fn cast<U: Real>(&self) -> SparseGrid<U> {
        SparseGrid::assemble(self.mask.clone(), self.voxels.iter().map(Voxel::cast).collect())
    }

    /// Trilinear stencil for `x`, clamping to the lattice of voxel centers.
    ///
    /// Points outside the bounding box are clamped as well; use
    /// [`Self::sample_trilinear`] for the checked variant.
    #[inline]
    pub fn stencil(&self, x: [T; 3]) -> Stencil<T> {
        let res = self.dims.res();
        let lat = &self.lattice;
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        let mut frac = [T::zero(); 3];
        let half = T::lit(0.5);
        for a in 0..3 {
            let mut u = (x[a] - lat.min[a]) * lat.inv_h[a] - half;
            if !(u > T::zero()) {
                u = T::zero();
            } else if u > lat.upper[a] {
                u = lat.upper[a];
            }
            let i0 = u.floor().to_usize().unwrap_or(0).min(res[a] - 1);
            lo[a] = i0;
            hi[a] = (i0 + 1).min(res[a] - 1);
            frac[a] = u - T::lit(i0 as f64);
        }
        let (nz, nyz) = (res[2], res[1] * res[2]);
        let mut slots = [NO_SLOT; 8];
        let mut weights = [T::zero(); 8];
        let one = T::one();
        for (c, (slot, w)) in slots.iter_mut().zip(weights.iter_mut()).enumerate() {
            let (bx, by, bz) = (c >> 2 & 1, c >> 1 & 1, c & 1);
            let ix = if bx == 1 { hi[0] } else { lo[0] };
            let iy = if by == 1 { hi[1] } else { lo[1] };
            let iz = if bz == 1 { hi[2] } else { lo[2] };
            *slot = self.slots[ix * nyz + iy * nz + iz];
            let wx = if bx == 1 { frac[0] } else { one - frac[0] };
            let wy = if by == 1 { frac[1] } else { one - frac[1] };
            let wz = if bz == 1 { frac[2] } else { one - frac[2] };
            *w = wx * wy * wz;
        }
        Stencil { slots, weights, frac }
    }

    /// Interpolated raw `(sigma, sh)` for a stencil. Unoccupied corners count as zero.
    ///
    /// Evaluated as nested linear interpolation (z, then y, then x), which
    /// reproduces constant fields and corner values exactly.
    #[inline]
    pub fn interpolate(&self, st: &Stencil<T>) -> Voxel<T> {
        let zero = Voxel::zero();
        let c: [&Voxel<T>; 8] = std::array::from_fn(|i| {
            let s = st.slots[i];
            if is_slot(s) {
                &self.voxels[s as usize]
            } else {
                &zero
            }
        });
        let [fx, fy, fz] = st.frac;
        let lerp = |a: T, b: T, f: T| a + f * (b - a);
        let tri = |v: [T; 8]| {
            let y0 = lerp(lerp(v[0], v[1], fz), lerp(v[2], v[3], fz), fy);
            let y1 = lerp(lerp(v[4], v[5], fz), lerp(v[6], v[7], fz), fy);
            lerp(y0, y1, fx)
        };
        let mut out = Voxel::zero();
        out.sigma = tri(std::array::from_fn(|i| c[i].sigma));
        for k in 0..SH_COEFFS {
            out.sh[k] = tri(std::array::from_fn(|i| c[i].sh[k]));
        }
        out
    }

    /// Trilinear sample of the raw parameters at world position `x`.
    pub fn sample_trilinear(&self, x: [T; 3]) -> Result<Voxel<T>> {
        let xf = x.map(|v| v.to_f64().unwrap_or(f64::NAN));
        if !self.dims.contains(xf) {
            return Err(Error::OutOfBounds(xf));
        }
        Ok(self.interpolate(&self.stencil(x)))
    }

    /// Drops voxels whose activated opacity is `<= sigma_threshold`.
    pub fn prune(&self, sigma_threshold: T) -> Self {
        self.retain(|_, v| v.density() > sigma_threshold)
    }

    /// Doubles the resolution on every axis.
    ///
    /// Each output voxel is the trilinear sample of this grid at its center and
    /// is occupied when any corner with non-zero weight is occupied.
    pub fn upsample(&self) -> Self {
        let out_dims = self.dims.doubled();
        Self::from_fn(&out_dims, |c| {
            let x = out_dims.center(c).map(T::lit);
            let st = self.stencil(x);
            let hit = st.slots.iter().zip(st.weights.iter()).any(|(&s, &w)| is_slot(s) && w > T::zero());
            hit.then(|| self.interpolate(&st))
        })
    }

    /// Halves the resolution (rounding up) by averaging occupied 2×2×2 children.
    ///
    /// Odd axes replicate their last slice, which is equivalent to averaging the
    /// truncated child set. A parent is occupied iff at least one child is.
    pub fn downsample(&self) -> Self {
        let out_dims = self.dims.halved();
        let res = self.dims.res();
        Self::from_fn(&out_dims, |p| {
            let mut mean = Voxel::zero();
            let mut n = 0usize;
            for child in children(p, res) {
                if let Some(v) = self.get(child) {
                    n += 1;
                    let k = T::lit(n as f64);
                    mean.sigma += (v.sigma - mean.sigma) / k;
                    for (m, &x) in mean.sh.iter_mut().zip(v.sh.iter()) {
                        *m += (x - *m) / k;
                    }
                }
            }
            (n > 0).then_some(mean)
        })
    }
}

/// Full-resolution children of coarse voxel `p`, clipped to `res`.
///
/// Axes of length < 2 after halving fall back to the last slice.
pub fn children(p: [usize; 3], res: [usize; 3]) -> impl Iterator<Item = [usize; 3]> {
    let axis = move |a: usize| -> ([usize; 2], usize) {
        let lo = (2 * p[a]).min(res[a] - 1);
        let hi = 2 * p[a] + 1;
        if hi < res[a] {
            ([lo, hi], 2)
        } else {
            ([lo, lo], 1)
        }
    };
    let (xs, nx) = axis(0);
    let (ys, ny) = axis(1);
    let (zs, nz) = axis(2);
    (0..nx).flat_map(move |i| (0..ny).flat_map(move |j| (0..nz).map(move |k| [xs[i], ys[j], zs[k]])))
}
