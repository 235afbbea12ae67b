use super::GridDims;
use crate::error::{Error, Result};

/// Dense binary volume with one bit per voxel, in linear (z-fastest) order.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyMask {
    dims: GridDims,
    words: Vec<u64>,
}

impl OccupancyMask {
    pub fn empty(dims: &GridDims) -> Self {
        Self { words: vec![0; dims.len().div_ceil(64)], dims: dims.clone() }
    }

    pub fn full(dims: &GridDims) -> Self {
        let mut m = Self::empty(dims);
        m.words.iter_mut().for_each(|w| *w = !0);
        m.clear_tail();
        m
    }

    pub fn from_fn(dims: &GridDims, mut f: impl FnMut([usize; 3]) -> bool) -> Self {
        let mut m = Self::empty(dims);
        for idx in 0..dims.len() {
            if f(dims.coord(idx)) {
                m.set(idx, true);
            }
        }
        m
    }

    pub fn from_indices(dims: &GridDims, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut m = Self::empty(dims);
        for i in indices {
            m.set(i, true);
        }
        m
    }

    #[inline]
    pub fn dims(&self) -> &GridDims {
        &self.dims
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.dims.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    #[inline(always)]
    pub fn get(&self, idx: usize) -> bool {
        (self.words[idx >> 6] >> (idx & 63)) & 1 == 1
    }

    #[inline]
    pub fn get_at(&self, c: [usize; 3]) -> bool {
        self.get(self.dims.linear(c))
    }

    #[inline(always)]
    pub fn set(&mut self, idx: usize, on: bool) {
        let bit = 1u64 << (idx & 63);
        if on {
            self.words[idx >> 6] |= bit;
        } else {
            self.words[idx >> 6] &= !bit;
        }
    }

    #[inline]
    pub fn set_at(&mut self, c: [usize; 3], on: bool) {
        let idx = self.dims.linear(c);
        self.set(idx, on);
    }

    /// Number of set bits.
    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Linear indices of set bits, ascending.
    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    None
                } else {
                    let b = w.trailing_zeros() as usize;
                    w &= w - 1;
                    Some(wi * 64 + b)
                }
            })
        })
    }

    fn zip_with(&self, other: &Self, f: impl Fn(u64, u64) -> u64) -> Self {
        assert!(
            self.dims.res() == other.dims.res(),
            "mask shape mismatch: {:?} vs {:?}",
            self.dims.res(),
            other.dims.res()
        );
        let mut out = Self {
            dims: self.dims.clone(),
            words: self.words.iter().zip(&other.words).map(|(&a, &b)| f(a, b)).collect(),
        };
        out.clear_tail();
        out
    }

    pub fn or(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a | b)
    }

    pub fn and(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a & b)
    }

    pub fn xor(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a ^ b)
    }

    /// `self ∧ ¬other`.
    pub fn and_not(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a & !b)
    }

    pub fn not(&self) -> Self {
        let mut out = Self { dims: self.dims.clone(), words: self.words.iter().map(|w| !w).collect() };
        out.clear_tail();
        out
    }

    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.words.iter().zip(&other.words).all(|(&a, &b)| a & !b == 0)
    }

    pub fn is_disjoint(&self, other: &Self) -> bool {
        self.words.iter().zip(&other.words).all(|(&a, &b)| a & b == 0)
    }

    fn clear_tail(&mut self) {
        let n = self.dims.len();
        let rem = n & 63;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }

    /// Number of bytes in the bit-packed form: `ceil(len / 8)`.
    pub fn packed_len(dims: &GridDims) -> usize {
        dims.len().div_ceil(8)
    }

    /// Bit-packed bytes; voxel `i` is bit `i % 8` (LSB first) of byte `i / 8`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = Self::packed_len(&self.dims);
        let mut out = Vec::with_capacity(n);
        for w in &self.words {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out.truncate(n);
        out
    }

    pub fn from_bytes(dims: &GridDims, bytes: &[u8]) -> Result<Self> {
        let n = Self::packed_len(dims);
        if bytes.len() != n {
            return Err(Error::Corrupt(format!("mask needs {n} bytes, found {}", bytes.len())));
        }
        let mut m = Self::empty(dims);
        for (wi, chunk) in bytes.chunks(8).enumerate() {
            let mut buf = [0u8; 8];
            buf[..chunk.len()].copy_from_slice(chunk);
            m.words[wi] = u64::from_le_bytes(buf);
        }
        let before = m.words.clone();
        m.clear_tail();
        if before != m.words {
            return Err(Error::Corrupt("mask has bits set past the last voxel".into()));
        }
        Ok(m)
    }
}
