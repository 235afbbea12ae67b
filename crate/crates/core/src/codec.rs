//! Per-frame model differences: change masks, half-precision payloads and
//! the DEFLATE-compressed `.sdlt` container.
//!
//! Layout: `"SDLT"`, `u32` version, `u32` frame index, `3×u32` resolution,
//! `f32` ε, then a DEFLATE stream holding the bit-packed next occupancy, the
//! bit-packed remain mask, `u32 n_add`, `n_add×28` f16 voxel values (σ first),
//! `u32 n_remain` and `n_remain×28` f16 differences. Little-endian throughout;
//! voxels follow mask order.

use std::path::Path;

use half::f16;

use crate::bytes::{deflate, inflate, put_f32, put_u32, Reader};
use crate::error::{Error, Result};
use crate::grid::{put_dims, read_res, GridDims, OccupancyMask, SparseGrid, Voxel, VOXEL_SCALARS};
use crate::scalar::Real;
use crate::sh::SH_COEFFS;

pub const DELTA_MAGIC: [u8; 4] = *b"SDLT";
pub const DELTA_VERSION: u32 = 1;
/// Fixed header bytes before the DEFLATE stream.
pub const DELTA_HEADER_LEN: usize = 4 + 4 + 4 + 12 + 4;

/// Add, erase and remain masks between consecutive frames; pairwise disjoint.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffMasks {
    pub m_add: OccupancyMask,
    pub m_erase: OccupancyMask,
    pub m_remain: OccupancyMask,
}

impl DiffMasks {
    /// `m_add ∨ m_erase ∨ m_remain`.
    pub fn merged(&self) -> OccupancyMask {
        self.m_add.or(&self.m_erase).or(&self.m_remain)
    }
}

/// Change masks. `changed(idx)` decides whether a voxel occupied in both
/// frames is kept in the remain mask.
pub fn compute_masks(
    mask_prev: &OccupancyMask,
    mask_next: &OccupancyMask,
    mut changed: impl FnMut(usize) -> bool,
) -> DiffMasks {
    let both = mask_prev.and(mask_next);
    DiffMasks {
        m_add: mask_next.and_not(mask_prev),
        m_erase: mask_prev.and_not(mask_next),
        m_remain: OccupancyMask::from_indices(mask_prev.dims(), both.iter_ones().filter(|&i| changed(i))),
    }
}

/// Change gates for voxels present in both frames.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeltaParams {
    /// Threshold on the L1 norm of the 27 SH differences (strict `>`).
    pub epsilon: f64,
    /// Threshold on `|Δσ|` for opacity-only changes; `None` uses the SH gate alone.
    pub sigma_epsilon: Option<f64>,
}

impl Default for DeltaParams {
    fn default() -> Self {
        Self { epsilon: 1.0 / 27.0, sigma_epsilon: None }
    }
}

impl DeltaParams {
    pub fn is_changed<T: Real>(&self, a: &Voxel<T>, b: &Voxel<T>) -> bool {
        let l1: f64 = (0..SH_COEFFS).map(|k| (b.sh[k] - a.sh[k]).abs().to_f64().unwrap_or(f64::INFINITY)).sum();
        if l1 > self.epsilon {
            return true;
        }
        match self.sigma_epsilon {
            Some(se) => (b.sigma - a.sigma).abs().to_f64().unwrap_or(f64::INFINITY) > se,
            None => false,
        }
    }
}

/// Masks between two grids using the gates of `params`.
pub fn grid_masks<T: Real>(prev: &SparseGrid<T>, next: &SparseGrid<T>, params: &DeltaParams) -> Result<DiffMasks> {
    check_res(prev.dims(), next.dims())?;
    Ok(compute_masks(prev.mask(), next.mask(), |i| {
        params.is_changed(prev.get_idx(i).unwrap(), next.get_idx(i).unwrap())
    }))
}

fn check_res(a: &GridDims, b: &GridDims) -> Result<()> {
    if a.res() != b.res() {
        return Err(Error::DimsMismatch(format!("{:?} vs {:?}", a.res(), b.res())));
    }
    Ok(())
}

/// IEEE half precision, round-to-nearest-even, saturating at ±65504.
#[inline]
pub fn to_half(x: f32) -> f16 {
    if x.is_nan() {
        return f16::NAN;
    }
    f16::from_f32(x.clamp(-65504.0, 65504.0))
}

fn quantize<T: Real>(v: [T; VOXEL_SCALARS]) -> [f16; VOXEL_SCALARS] {
    v.map(|x| to_half(x.to_f32_lossy()))
}

/// One encoded model difference.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameDelta {
    pub frame: u32,
    pub epsilon: f32,
    /// Full occupancy of the new frame; add and erase masks follow from it.
    pub mask_next: OccupancyMask,
    pub m_remain: OccupancyMask,
    /// Values of added voxels in `mask_next ∧ ¬mask_prev` order.
    pub payload_add: Vec<[f16; VOXEL_SCALARS]>,
    /// Differences of remain voxels in `m_remain` order.
    pub payload_remain: Vec<[f16; VOXEL_SCALARS]>,
}

/// Encodes `next − prev` as frame `frame`.
pub fn encode_delta<T: Real>(
    prev: &SparseGrid<T>,
    next: &SparseGrid<T>,
    frame: u32,
    params: &DeltaParams,
) -> Result<FrameDelta> {
    let masks = grid_masks(prev, next, params)?;
    let payload_add = masks.m_add.iter_ones().map(|i| quantize(next.get_idx(i).unwrap().to_array())).collect();
    let payload_remain = masks
        .m_remain
        .iter_ones()
        .map(|i| {
            let (a, b) = (prev.get_idx(i).unwrap().to_array(), next.get_idx(i).unwrap().to_array());
            std::array::from_fn(|k| to_half(b[k].to_f32_lossy() - a[k].to_f32_lossy()))
        })
        .collect();
    Ok(FrameDelta {
        frame,
        epsilon: params.epsilon as f32,
        mask_next: next.mask().clone(),
        m_remain: masks.m_remain,
        payload_add,
        payload_remain,
    })
}

fn put_payload(out: &mut Vec<u8>, p: &[[f16; VOXEL_SCALARS]]) {
    put_u32(out, p.len() as u32);
    for v in p {
        for x in v {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
}

fn read_payload(r: &mut Reader<'_>) -> Result<Vec<[f16; VOXEL_SCALARS]>> {
    let n = r.u32()? as usize;
    let raw =
        r.take(n.checked_mul(2 * VOXEL_SCALARS).ok_or_else(|| Error::Corrupt("payload count overflow".into()))?)?;
    Ok(raw
        .chunks_exact(2 * VOXEL_SCALARS)
        .map(|c| std::array::from_fn(|k| f16::from_le_bytes([c[2 * k], c[2 * k + 1]])))
        .collect())
}

impl FrameDelta {
    /// An identity delta for a grid with occupancy `mask`.
    pub fn empty(frame: u32, mask: &OccupancyMask, epsilon: f32) -> Self {
        Self {
            frame,
            epsilon,
            mask_next: mask.clone(),
            m_remain: OccupancyMask::empty(mask.dims()),
            payload_add: Vec::new(),
            payload_remain: Vec::new(),
        }
    }

    pub fn dims(&self) -> &GridDims {
        self.mask_next.dims()
    }

    /// Uncompressed body (the bytes fed to DEFLATE).
    pub fn body(&self) -> Vec<u8> {
        let packed = OccupancyMask::packed_len(self.dims());
        let mut body = Vec::with_capacity(2 * packed + 8 + (self.payload_add.len() + self.payload_remain.len()) * 56);
        body.extend_from_slice(&self.mask_next.to_bytes());
        body.extend_from_slice(&self.m_remain.to_bytes());
        put_payload(&mut body, &self.payload_add);
        put_payload(&mut body, &self.payload_remain);
        body
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&DELTA_MAGIC);
        put_u32(&mut out, DELTA_VERSION);
        put_u32(&mut out, self.frame);
        put_dims(&mut out, self.dims());
        put_f32(&mut out, self.epsilon);
        out.extend_from_slice(&deflate(&self.body()));
        out
    }

    /// Parses a delta. The file stores only the resolution, so masks carry a
    /// unit bounding box; [`apply_delta`] matches on resolution.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(&DELTA_MAGIC)?;
        let version = r.u32()?;
        if version != DELTA_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let frame = r.u32()?;
        let dims = GridDims::new(read_res(&mut r)?, [0.0; 3], [1.0; 3])?;
        let epsilon = r.f32()?;
        let body = inflate(r.remaining())?;
        let mut r = Reader::new(&body);
        let packed = OccupancyMask::packed_len(&dims);
        let mask_next = OccupancyMask::from_bytes(&dims, r.take(packed)?)?;
        let m_remain = OccupancyMask::from_bytes(&dims, r.take(packed)?)?;
        let payload_add = read_payload(&mut r)?;
        let payload_remain = read_payload(&mut r)?;
        r.finish()?;
        if !m_remain.is_subset_of(&mask_next) {
            return Err(Error::Corrupt("remain mask is not inside the next occupancy".into()));
        }
        if payload_remain.len() != m_remain.count() {
            return Err(Error::Corrupt(format!(
                "remain payload holds {} voxels, mask has {}",
                payload_remain.len(),
                m_remain.count()
            )));
        }
        Ok(Self { frame, epsilon, mask_next, m_remain, payload_add, payload_remain })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// `V^i = V^{i−1} + δ_i`: occupancy becomes `mask_next`, added voxels take
/// their payload, remain voxels add their difference, everything else is
/// carried over bit-identically.
pub fn apply_delta<T: Real>(prev: &SparseGrid<T>, delta: &FrameDelta) -> Result<SparseGrid<T>> {
    check_res(prev.dims(), delta.dims())?;
    let dims = prev.dims();
    let next_mask = OccupancyMask::from_indices(dims, delta.mask_next.iter_ones());
    let remain = OccupancyMask::from_indices(dims, delta.m_remain.iter_ones());
    let add = next_mask.and_not(prev.mask());
    if add.count() != delta.payload_add.len() {
        return Err(Error::Corrupt(format!(
            "add payload holds {} voxels, mask has {}",
            delta.payload_add.len(),
            add.count()
        )));
    }
    if !remain.is_subset_of(prev.mask()) {
        return Err(Error::Corrupt("remain mask covers voxels absent from the previous frame".into()));
    }
    let lift = |h: &[f16; VOXEL_SCALARS]| h.map(|x| T::lit(x.to_f64()));
    let mut adds = delta.payload_add.iter();
    let mut diffs = delta.payload_remain.iter();
    let voxels = next_mask
        .iter_ones()
        .map(|i| match prev.get_idx(i) {
            Some(v) if remain.get(i) => {
                let d = lift(diffs.next().unwrap());
                let mut a = v.to_array();
                for (x, dx) in a.iter_mut().zip(d.iter()) {
                    *x += *dx;
                }
                Voxel::from_array(&a)
            }
            Some(v) => *v,
            None => Voxel::from_array(&lift(adds.next().unwrap())),
        })
        .collect();
    SparseGrid::from_parts(next_mask, voxels)
}

/// Byte counts of a delta at each size-reduction stage.
#[derive(Clone, Debug, PartialEq)]
pub struct DeltaStats {
    pub frame: u32,
    pub epsilon: f32,
    pub n_add: usize,
    pub n_remain: usize,
    pub n_occupied: usize,
    /// Erased voxels; needs the previous occupancy.
    pub n_erase: Option<usize>,
    /// Three packed masks plus f32 values for every added voxel and every
    /// voxel present in both frames; needs the previous occupancy.
    pub raw: Option<usize>,
    /// Three packed masks plus f32 values for added and gated remain voxels.
    pub post_threshold: usize,
    /// Two packed masks, counts and f16 payloads: the uncompressed body.
    pub post_half: usize,
    /// DEFLATE stream length.
    pub compressed: usize,
    /// Header plus DEFLATE stream, i.e. the file size.
    pub file: usize,
    /// Add, erase and remain masks packed, before and after DEFLATE; needs
    /// the previous occupancy.
    pub diff_masks_raw: Option<usize>,
    pub diff_masks_deflated: Option<usize>,
}

pub fn delta_stats(delta: &FrameDelta, mask_prev: Option<&OccupancyMask>) -> DeltaStats {
    let packed = OccupancyMask::packed_len(delta.dims());
    let scalar_bytes = 4 * VOXEL_SCALARS;
    let (n_add, n_remain) = (delta.payload_add.len(), delta.payload_remain.len());
    let body = delta.body();
    let compressed = deflate(&body).len();
    let prev = mask_prev.map(|m| OccupancyMask::from_indices(delta.dims(), m.iter_ones()));
    let masks = prev.as_ref().map(|p| DiffMasks {
        m_add: delta.mask_next.and_not(p),
        m_erase: p.and_not(&delta.mask_next),
        m_remain: delta.m_remain.clone(),
    });
    let diff_masks_raw = masks.as_ref().map(|_| 3 * packed);
    let diff_masks_deflated = masks.as_ref().map(|m| {
        let mut b = m.m_add.to_bytes();
        b.extend_from_slice(&m.m_erase.to_bytes());
        b.extend_from_slice(&m.m_remain.to_bytes());
        deflate(&b).len()
    });
    DeltaStats {
        frame: delta.frame,
        epsilon: delta.epsilon,
        n_add,
        n_remain,
        n_occupied: delta.mask_next.count(),
        n_erase: masks.as_ref().map(|m| m.m_erase.count()),
        raw: prev.as_ref().map(|p| 3 * packed + (n_add + p.and(&delta.mask_next).count()) * scalar_bytes),
        post_threshold: 3 * packed + (n_add + n_remain) * scalar_bytes,
        post_half: body.len(),
        compressed,
        file: DELTA_HEADER_LEN + compressed,
        diff_masks_raw,
        diff_masks_deflated,
    }
}
