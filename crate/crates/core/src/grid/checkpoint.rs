//! Full-grid checkpoint file (`.sgrd`).
//!
//! Layout: `"SGRD"`, `u32` version, then a DEFLATE stream holding
//! `3×u32` resolution, `6×f32` bounding box (min xyz, max xyz), the
//! bit-packed occupancy mask and `28×f32` per occupied voxel (σ first).
//! All integers and floats are little-endian.

use std::path::Path;

use super::{GridDims, OccupancyMask, SparseGrid, Voxel, VOXEL_SCALARS};
use crate::bytes::{deflate, inflate, put_f32, put_u32, Reader};
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SGRD";
pub const CHECKPOINT_VERSION: u32 = 1;

pub(crate) fn put_dims(out: &mut Vec<u8>, dims: &GridDims) {
    for n in dims.res() {
        put_u32(out, n as u32);
    }
}

pub(crate) fn read_res(r: &mut Reader<'_>) -> Result<[usize; 3]> {
    Ok([r.u32()? as usize, r.u32()? as usize, r.u32()? as usize])
}

/// Serializes `grid` with values rounded to `f32`.
pub fn encode_checkpoint<T: Real>(grid: &SparseGrid<T>) -> Vec<u8> {
    let dims = grid.dims();
    let mut body = Vec::with_capacity(40 + OccupancyMask::packed_len(dims) + grid.len() * VOXEL_SCALARS * 4);
    put_dims(&mut body, dims);
    for v in dims.world_min.iter().chain(dims.world_max.iter()) {
        put_f32(&mut body, *v as f32);
    }
    body.extend_from_slice(&grid.mask().to_bytes());
    for v in grid.voxels() {
        for x in v.to_array() {
            put_f32(&mut body, x.to_f32_lossy());
        }
    }
    let mut out = Vec::with_capacity(body.len() / 2);
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    out.extend_from_slice(&deflate(&body));
    out
}

pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> Result<SparseGrid<T>> {
    let mut r = Reader::new(bytes);
    r.magic(&CHECKPOINT_MAGIC)?;
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let body = inflate(r.remaining())?;
    let mut r = Reader::new(&body);
    let res = read_res(&mut r)?;
    let mut bbox = [0f64; 6];
    for b in &mut bbox {
        *b = r.f32()? as f64;
    }
    let dims = GridDims::new(res, [bbox[0], bbox[1], bbox[2]], [bbox[3], bbox[4], bbox[5]])?;
    let mask = OccupancyMask::from_bytes(&dims, r.take(OccupancyMask::packed_len(&dims))?)?;
    let n = mask.count();
    let mut voxels = Vec::with_capacity(n);
    for _ in 0..n {
        let mut a = [T::zero(); VOXEL_SCALARS];
        for x in &mut a {
            *x = T::lit(r.f32()? as f64);
        }
        voxels.push(Voxel::from_array(&a));
    }
    r.finish()?;
    SparseGrid::from_parts(mask, voxels)
}

pub fn save_checkpoint<T: Real>(grid: &SparseGrid<T>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_checkpoint(grid))?;
    Ok(())
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<SparseGrid<T>> {
    decode_checkpoint(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_grid() -> SparseGrid<f32> {
        let d = GridDims::new([4, 3, 5], [-1.0, -0.5, 0.0], [1.0, 0.5, 2.0]).unwrap();
        SparseGrid::from_fn(&d, |c| {
            ((c[0] + c[1] + c[2]) % 3 == 0).then(|| {
                let base = (c[0] * 100 + c[1] * 10 + c[2]) as f32;
                Voxel::new(base, std::array::from_fn(|k| base * 0.01 - k as f32))
            })
        })
    }

    #[test]
    fn roundtrip_is_exact_in_f32() {
        let g = sample_grid();
        let back: SparseGrid<f32> = decode_checkpoint(&encode_checkpoint(&g)).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn header_is_uncompressed_magic_and_version() {
        let b = encode_checkpoint(&sample_grid());
        assert_eq!(&b[..4], b"SGRD");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        let body = inflate(&b[8..]).unwrap();
        assert_eq!(u32::from_le_bytes(body[0..4].try_into().unwrap()), 4);
        assert_eq!(f32::from_le_bytes(body[12..16].try_into().unwrap()), -1.0);
    }

    #[test]
    fn rejects_bad_magic_version_and_truncation() {
        let mut b = encode_checkpoint(&sample_grid());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint::<f32>(&bad), Err(Error::BadMagic { .. })));
        let mut v2 = b.clone();
        v2[4] = 2;
        assert!(matches!(decode_checkpoint::<f32>(&v2), Err(Error::UnsupportedVersion(2))));
        b.truncate(b.len() - 5);
        assert!(decode_checkpoint::<f32>(&b).is_err());
    }

    #[test]
    fn empty_grid_roundtrips() {
        let d = GridDims::cube(8, 1.0).unwrap();
        let g = SparseGrid::<f32>::empty(&d);
        let back: SparseGrid<f32> = decode_checkpoint(&encode_checkpoint(&g)).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.dims(), &d);
    }
}
