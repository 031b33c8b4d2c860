//! Deterministic per-pixel descriptors standing in for a learned encoder.
//!
//! Descriptors are computed on the average-pooled grayscale grid at the
//! requested downsample level: z-scored intensity at three window sizes,
//! contrast-normalized central-difference gradients at three steps, census
//! signs, and contrast-normalized neighborhood rings, all L2-normalized per
//! pixel. The wide channel count is what gives 81-candidate lookup windows
//! a usable correlation margin; narrow descriptors cannot separate a true
//! match from the order statistics of that many candidates.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::avg_pool2d;
use crate::tensor::Tensor;

/// Number of descriptor channels: z-scores over 3x3/5x5/7x7 (3), gradients
/// at steps 1..3 (6), census signs on the radius-1 ring (8), and
/// contrast-normalized neighbor deviations on the full radius-1..4 rings
/// (8 + 16 + 24 + 32).
pub const DESCRIPTOR_CHANNELS: usize = 97;

/// 8-bit grayscale or RGB image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Image {
    /// Wraps raw 8-bit samples. Images must be at least 16x16 so that
    /// 1/16-level maps are non-empty.
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!(
                "image must have 1 or 3 channels, got {channels}"
            )));
        }
        if width < 16 || height < 16 {
            return Err(Error::invalid(format!(
                "image too small: {width}x{height}, need at least 16x16"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::invalid(format!(
                "image data length {} does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    /// Grayscale plane as a `[1, H, W]` tensor, RGB weighted 0.299/0.587/0.114.
    pub fn gray_tensor(&self) -> Tensor {
        let mut out = vec![0.0f32; self.width * self.height];
        match self.channels {
            1 => {
                for (o, &v) in out.iter_mut().zip(&self.data) {
                    *o = v as f32;
                }
            }
            _ => {
                for (i, o) in out.iter_mut().enumerate() {
                    let p = &self.data[i * 3..i * 3 + 3];
                    *o = 0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32;
                }
            }
        }
        Tensor::new(vec![1, self.height, self.width], out).expect("shape by construction")
    }
}

/// L2-normalized descriptor grid at a stated downsample level.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Downsample factor relative to the input image: 8 or 16.
    pub level: usize,
    pub data: Tensor,
}

impl FeatureMap {
    /// Descriptor vector at (row, col) as a channel slice iterator index base.
    #[inline]
    pub fn at(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.data.at3(ch, row, col)
    }

    /// Copies the descriptor at (row, col) into `out`.
    #[inline]
    pub fn descriptor_into(&self, row: usize, col: usize, out: &mut [f32]) {
        let plane = self.height * self.width;
        let base = row * self.width + col;
        let d = self.data.data();
        for (ch, o) in out.iter_mut().enumerate() {
            *o = d[ch * plane + base];
        }
    }

    /// Builds a map directly from a descriptor tensor; used by tests that
    /// construct synthetic feature grids.
    pub fn from_tensor(level: usize, data: Tensor) -> Result<Self> {
        if data.rank() != 3 {
            return Err(Error::invalid("feature tensor must be [C, H, W]".to_string()));
        }
        Ok(FeatureMap {
            channels: data.shape()[0],
            height: data.shape()[1],
            width: data.shape()[2],
            level,
            data,
        })
    }
}

/// Radius-1 ring in fixed scan order, used for the census signs and the
/// first deviation ring.
const RING1: [(i64, i64); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

/// Radius-2 ring in fixed scan order.
const RING2: [(i64, i64); 16] = [
    (-2, -2),
    (-2, -1),
    (-2, 0),
    (-2, 1),
    (-2, 2),
    (-1, -2),
    (-1, 2),
    (0, -2),
    (0, 2),
    (1, -2),
    (1, 2),
    (2, -2),
    (2, -1),
    (2, 0),
    (2, 1),
    (2, 2),
];

/// Radius-3 ring in fixed scan order.
const RING3: [(i64, i64); 24] = [
    (-3, -3),
    (-3, -2),
    (-3, -1),
    (-3, 0),
    (-3, 1),
    (-3, 2),
    (-3, 3),
    (-2, -3),
    (-2, 3),
    (-1, -3),
    (-1, 3),
    (0, -3),
    (0, 3),
    (1, -3),
    (1, 3),
    (2, -3),
    (2, 3),
    (3, -3),
    (3, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (3, 2),
    (3, 3),
];

/// Radius-4 ring in fixed scan order.
const RING4: [(i64, i64); 32] = [
    (-4, -4),
    (-4, -3),
    (-4, -2),
    (-4, -1),
    (-4, 0),
    (-4, 1),
    (-4, 2),
    (-4, 3),
    (-4, 4),
    (-3, -4),
    (-3, 4),
    (-2, -4),
    (-2, 4),
    (-1, -4),
    (-1, 4),
    (0, -4),
    (0, 4),
    (1, -4),
    (1, 4),
    (2, -4),
    (2, 4),
    (3, -4),
    (3, 4),
    (4, -4),
    (4, -3),
    (4, -2),
    (4, -1),
    (4, 0),
    (4, 1),
    (4, 2),
    (4, 3),
    (4, 4),
];

/// Extracts the 11-channel descriptor map at `level` (8 or 16).
///
/// Identical images yield bit-identical maps at any thread count.
pub fn extract_features(image: &Image, level: usize) -> Result<FeatureMap> {
    if level != 8 && level != 16 {
        return Err(Error::invalid(format!(
            "feature level must be 8 or 16, got {level}"
        )));
    }
    let gray = image.gray_tensor();
    let pooled = avg_pool2d(&gray, level)?;
    let (h, w) = (pooled.shape()[1], pooled.shape()[2]);
    let grid = pooled.data();

    let plane = h * w;
    // Pixel-major scratch so each row is a disjoint chunk for the parallel
    // fill, transposed to channel-major below.
    let mut pixel_major = vec![0.0f32; plane * DESCRIPTOR_CHANNELS];
    pixel_major
        .par_chunks_mut(w * DESCRIPTOR_CHANNELS)
        .enumerate()
        .for_each(|(row, chunk)| {
            for col in 0..w {
                let d = &mut chunk[col * DESCRIPTOR_CHANNELS..(col + 1) * DESCRIPTOR_CHANNELS];
                descriptor_at(grid, h, w, row, col, d);
            }
        });
    let mut out = vec![0.0f32; DESCRIPTOR_CHANNELS * plane];
    for p in 0..plane {
        for ch in 0..DESCRIPTOR_CHANNELS {
            out[ch * plane + p] = pixel_major[p * DESCRIPTOR_CHANNELS + ch];
        }
    }

    Ok(FeatureMap {
        channels: DESCRIPTOR_CHANNELS,
        height: h,
        width: w,
        level,
        data: Tensor::new(vec![DESCRIPTOR_CHANNELS, h, w], out).expect("shape by construction"),
    })
}

/// Computes the unnormalized descriptor and normalizes it in place.
///
/// All statistics work on deviations from the center pixel, which keeps
/// every channel exactly invariant to a constant intensity offset.
fn descriptor_at(grid: &[f32], h: usize, w: usize, row: usize, col: usize, out: &mut [f32]) {
    let center = grid[row * w + col];
    let get = |r: i64, c: i64| -> Option<f32> {
        if r < 0 || c < 0 || r as usize >= h || c as usize >= w {
            None
        } else {
            Some(grid[r as usize * w + c as usize])
        }
    };
    let (ri, ci) = (row as i64, col as i64);

    // z-scores over 3x3, 5x5 and 7x7 windows of in-grid pixels, plus the
    // matching window means and inverse stddevs reused by the gradient and
    // deviation channels so every channel stays near unit scale.
    let mut inv_sigma = [0.0f32; 3];
    let mut mean_dev_w = [0.0f32; 3];
    for (wi, radius) in [1i64, 2, 3].iter().enumerate() {
        let mut n = 0u32;
        let mut sum = 0.0f32;
        let mut sum_sq = 0.0f32;
        for dy in -radius..=*radius {
            for dx in -radius..=*radius {
                if let Some(v) = get(ri + dy, ci + dx) {
                    let dev = v - center;
                    n += 1;
                    sum += dev;
                    sum_sq += dev * dev;
                }
            }
        }
        let mean_dev = sum / n as f32;
        let var = (sum_sq / n as f32 - mean_dev * mean_dev).max(0.0);
        inv_sigma[wi] = if var < 1e-12 { 0.0 } else { 1.0 / var.sqrt() };
        mean_dev_w[wi] = mean_dev;
        // (center - window mean) / window stddev
        out[wi] = -mean_dev * inv_sigma[wi];
    }

    // Central-difference gradients at steps 1..3, each divided by the stddev
    // of the matching window. An out-of-grid neighbor falls back to the
    // center value, giving a half one-sided difference at borders.
    for (si, step) in [1i64, 2, 3].iter().enumerate() {
        let left = get(ri, ci - step).unwrap_or(center);
        let right = get(ri, ci + step).unwrap_or(center);
        let up = get(ri - step, ci).unwrap_or(center);
        let down = get(ri + step, ci).unwrap_or(center);
        out[3 + 2 * si] = (right - left) * 0.5 * inv_sigma[si];
        out[3 + 2 * si + 1] = (down - up) * 0.5 * inv_sigma[si];
    }

    // Census signs on the radius-1 ring at half weight (they quantize hard
    // and would otherwise inject step noise into the sub-cell balance);
    // out-of-grid neighbors yield 0.
    for (k, (dy, dx)) in RING1.iter().enumerate() {
        out[9 + k] = 0.5
            * match get(ri + dy, ci + dx) {
                Some(v) => {
                    if v > center {
                        1.0
                    } else if v < center {
                        -1.0
                    } else {
                        0.0
                    }
                }
                None => 0.0,
            };
    }

    // Contrast-normalized neighbor deviations from the window mean: the raw
    // patch shape, clipped to keep outliers from owning the norm. Centering
    // on the window mean (not the center pixel) keeps the ring channels free
    // of a shared rank-one component that would flatten their geometry.
    let mut slot = 17usize;
    for (ring, wi) in [
        (&RING1[..], 0usize),
        (&RING2[..], 1),
        (&RING3[..], 2),
        (&RING4[..], 2),
    ] {
        let mean_dev = mean_dev_w[wi];
        let sigma = inv_sigma[wi];
        for (dy, dx) in ring {
            out[slot] = match get(ri + dy, ci + dx) {
                // (v - window mean) phrased through center deviations so a
                // constant intensity offset cancels exactly
                Some(v) => (((v - center) - mean_dev) * sigma).clamp(-2.0, 2.0),
                None => 0.0,
            };
            slot += 1;
        }
    }
    debug_assert_eq!(slot, DESCRIPTOR_CHANNELS);

    let norm_sq: f32 = out.iter().map(|v| v * v).sum();
    if norm_sq > 0.0 {
        let inv = 1.0 / norm_sq.sqrt();
        for v in out.iter_mut() {
            *v *= inv;
        }
    }
}

/// Feature maps at both pipeline levels: 1/8 and 1/16.
pub fn build_pyramid(image: &Image) -> Result<(FeatureMap, FeatureMap)> {
    Ok((extract_features(image, 8)?, extract_features(image, 16)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn noise_image(w: usize, h: usize, seed: u64) -> Image {
        let mut r = StdRng::seed_from_u64(seed);
        Image::new(w, h, 1, (0..w * h).map(|_| r.gen()).collect()).unwrap()
    }

    #[test]
    fn image_rejects_small_or_mismatched() {
        assert!(Image::new(8, 32, 1, vec![0; 8 * 32]).is_err());
        assert!(Image::new(32, 32, 1, vec![0; 5]).is_err());
        assert!(Image::new(32, 32, 2, vec![0; 32 * 32 * 2]).is_err());
    }

    #[test]
    fn flat_image_gives_all_zero_vectors() {
        let img = Image::new(32, 32, 1, vec![77; 32 * 32]).unwrap();
        let fm = extract_features(&img, 8).unwrap();
        assert!(fm.data.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn extraction_is_deterministic() {
        let img = noise_image(64, 48, 9);
        let a = extract_features(&img, 8).unwrap();
        let b = extract_features(&img.clone(), 8).unwrap();
        assert_eq!(a.data.data(), b.data.data());
    }

    #[test]
    fn pyramid_shapes_use_ceil() {
        let img = noise_image(64, 64, 1);
        let (f8, f16) = build_pyramid(&img).unwrap();
        assert_eq!((f8.height, f8.width), (8, 8));
        assert_eq!((f16.height, f16.width), (4, 4));

        let img = noise_image(1920, 1080, 2);
        let (f8, f16) = build_pyramid(&img).unwrap();
        assert_eq!((f8.height, f8.width), (135, 240));
        assert_eq!((f16.height, f16.width), (68, 120));
    }

    #[test]
    fn norms_are_unit_or_exactly_zero() {
        let img = noise_image(128, 96, 4);
        let fm = extract_features(&img, 8).unwrap();
        let plane = fm.height * fm.width;
        let mut unit = 0usize;
        for p in 0..plane {
            let norm_sq: f32 = (0..DESCRIPTOR_CHANNELS)
                .map(|c| {
                    let v = fm.data.data()[c * plane + p];
                    v * v
                })
                .sum();
            if norm_sq == 0.0 {
                continue;
            }
            assert!((norm_sq.sqrt() - 1.0).abs() < 1e-5);
            unit += 1;
        }
        assert!(unit as f64 >= 0.99 * plane as f64, "only {unit}/{plane} unit vectors");
    }

    #[test]
    fn step_edge_flips_gradient_sign() {
        // left half dark, right half bright
        let (w, h) = (64, 32);
        let mut data = vec![0u8; w * h];
        for y in 0..h {
            for x in w / 2..w {
                data[y * w + x] = 200;
            }
        }
        let img = Image::new(w, h, 1, data).unwrap();
        let fm = extract_features(&img, 8).unwrap();
        // oracle: straight-line recomputation on the pooled grid
        let pooled = avg_pool2d(&img.gray_tensor(), 8).unwrap();
        let mut desc = [0.0f32; DESCRIPTOR_CHANNELS];
        for row in 0..fm.height {
            for col in 0..fm.width {
                descriptor_at(
                    pooled.data(),
                    fm.height,
                    fm.width,
                    row,
                    col,
                    &mut desc,
                );
                for (ch, &v) in desc.iter().enumerate() {
                    assert_eq!(fm.at(row, col, ch), v);
                }
            }
        }
        // gradient-x positive on the column left of the edge, zero far away
        let gx_before = fm.at(h / 16, w / 16 - 1, 3);
        assert!(gx_before > 0.0);
        assert_eq!(fm.at(h / 16, 0, 3), 0.0);
    }

    #[test]
    fn brightness_offset_leaves_descriptors_unchanged() {
        // dims divisible by 16 keep pooling blocks full-size, so the
        // invariance is exact
        let (w, h) = (64, 64);
        let mut r = StdRng::seed_from_u64(21);
        let base: Vec<u8> = (0..w * h).map(|_| r.gen_range(0..200)).collect();
        let shifted: Vec<u8> = base.iter().map(|&v| v + 40).collect();
        let a = extract_features(&Image::new(w, h, 1, base).unwrap(), 16).unwrap();
        let b = extract_features(&Image::new(w, h, 1, shifted).unwrap(), 16).unwrap();
        assert_eq!(a.data.data(), b.data.data());
    }

    #[test]
    fn sixteen_pixel_shift_moves_level16_map_one_column() {
        let (w, h) = (256, 64);
        let img = noise_image(w, h, 33);
        let mut shifted = vec![0u8; w * h];
        for y in 0..h {
            for x in 16..w {
                shifted[y * w + x] = img.data()[y * w + (x - 16)];
            }
        }
        let shifted = Image::new(w, h, 1, shifted).unwrap();
        let a = extract_features(&img, 16).unwrap();
        let b = extract_features(&shifted, 16).unwrap();
        // interior columns (clear of the blank strip and the radius-4
        // descriptor halo of either border) shift by one
        let plane = a.height * a.width;
        for ch in 0..DESCRIPTOR_CHANNELS {
            for row in 0..a.height {
                for col in 6..a.width - 5 {
                    let va = a.data.data()[ch * plane + row * a.width + (col - 1)];
                    let vb = b.data.data()[ch * plane + row * b.width + col];
                    assert_eq!(va, vb, "ch {ch} row {row} col {col}");
                }
            }
        }
    }

    #[test]
    fn rgb_gray_weighting() {
        let mut data = vec![0u8; 16 * 16 * 3];
        data[0] = 255; // lone red pixel
        let img = Image::new(16, 16, 3, data).unwrap();
        let gray = img.gray_tensor();
        assert!((gray.data()[0] - 0.299 * 255.0).abs() < 1e-4);
        assert_eq!(gray.data()[1], 0.0);
    }
}
