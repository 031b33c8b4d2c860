use crate::error::{Error, Result};

/// Dense row-major f32 tensor of rank 1..=5.
///
/// Axis order is the declared order of `shape`; the last axis is contiguous.
/// All reductions over a tensor are performed in a fixed sequential order so
/// results do not depend on the degree of cross-cell parallelism.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 5 {
            return Err(Error::invalid(format!(
                "tensor rank must be 1..=5, got {}",
                shape.len()
            )));
        }
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(Error::invalid(format!(
                "tensor data length {} does not match shape {:?} (product {})",
                data.len(),
                shape,
                len
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Strides in elements for each axis, last axis stride 1.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1usize; self.shape.len()];
        for i in (0..self.shape.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.shape[i + 1];
        }
        strides
    }

    #[inline]
    pub fn at3(&self, i: usize, j: usize, k: usize) -> f32 {
        debug_assert_eq!(self.rank(), 3);
        let (s1, s2) = (self.shape[1], self.shape[2]);
        self.data[(i * s1 + j) * s2 + k]
    }

    #[inline]
    pub fn at4(&self, i: usize, j: usize, k: usize, l: usize) -> f32 {
        debug_assert_eq!(self.rank(), 4);
        let (s1, s2, s3) = (self.shape[1], self.shape[2], self.shape[3]);
        self.data[((i * s1 + j) * s2 + k) * s3 + l]
    }

    #[inline]
    pub fn set3(&mut self, i: usize, j: usize, k: usize, v: f32) {
        debug_assert_eq!(self.rank(), 3);
        let (s1, s2) = (self.shape[1], self.shape[2]);
        self.data[(i * s1 + j) * s2 + k] = v;
    }

    #[inline]
    pub fn set4(&mut self, i: usize, j: usize, k: usize, l: usize, v: f32) {
        debug_assert_eq!(self.rank(), 4);
        let (s1, s2, s3) = (self.shape[1], self.shape[2], self.shape[3]);
        self.data[((i * s1 + j) * s2 + k) * s3 + l] = v;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Packed bit mask over a flat index space.
///
/// Stored as 64-bit words, one bit per slot, matching the memory model's
/// 1-bit-per-slot accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct BitMask {
    len: usize,
    words: Vec<u64>,
}

impl BitMask {
    pub fn new_false(len: usize) -> Self {
        BitMask {
            len,
            words: vec![0u64; len.div_ceil(64)],
        }
    }

    pub fn new_true(len: usize) -> Self {
        let mut m = Self::new_false(len);
        for i in 0..len {
            m.set(i, true);
        }
        m
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, v: bool) {
        debug_assert!(i < self.len);
        let w = &mut self.words[i / 64];
        if v {
            *w |= 1 << (i % 64);
        } else {
            *w &= !(1 << (i % 64));
        }
    }

    pub fn count_true(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Backing storage size in bytes.
    pub fn byte_len(&self) -> usize {
        self.words.len() * 8
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_shape_mismatch_rejected() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn tensor_rank_limits() {
        assert!(Tensor::new(vec![], vec![]).is_err());
        assert!(Tensor::new(vec![1; 6], vec![0.0]).is_err());
        assert!(Tensor::new(vec![1; 5], vec![0.0]).is_ok());
    }

    #[test]
    fn strides_row_major() {
        let t = Tensor::zeros(vec![2, 3, 4]);
        assert_eq!(t.strides(), vec![12, 4, 1]);
    }

    #[test]
    fn bitmask_round_trip() {
        let mut m = BitMask::new_false(130);
        m.set(0, true);
        m.set(64, true);
        m.set(129, true);
        assert!(m.get(0) && m.get(64) && m.get(129));
        assert!(!m.get(1) && !m.get(128));
        assert_eq!(m.count_true(), 3);
        assert_eq!(m.byte_len(), 24);
    }
}
