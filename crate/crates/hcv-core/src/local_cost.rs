//! 4D local cost volume at 1/8 resolution and flow-recentered local lookup.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::flow::FlowField;
use crate::global_cost::{dot_normalized, PixelMajor};
use crate::numerics::bilinear_sample_into;
use crate::tensor::Tensor;

/// Correlation scores over a square offset window per 1/8-level pixel.
///
/// Offset ordinal `o = (dy + l_r) * (2*l_r + 1) + (dx + l_r)`.
#[derive(Debug, Clone)]
pub struct LocalCostVolume {
    pub height: usize,
    pub width: usize,
    pub l_r: usize,
    /// `[H2, W2, (2*l_r+1)^2]` row-major.
    pub scores: Vec<f32>,
    _meter: crate::memory::TrackedAlloc,
}

impl LocalCostVolume {
    fn new(height: usize, width: usize, l_r: usize, scores: Vec<f32>) -> Self {
        let side = 2 * l_r + 1;
        assert_eq!(
            scores.len(),
            height * width * side * side,
            "local volume storage bound violated"
        );
        let meter = crate::memory::TrackedAlloc::new(4 * scores.len() as u64);
        LocalCostVolume {
            height,
            width,
            l_r,
            scores,
            _meter: meter,
        }
    }

    pub fn window_len(&self) -> usize {
        let side = 2 * self.l_r + 1;
        side * side
    }

    /// Window scores of one pixel.
    #[inline]
    pub fn pixel_scores(&self, row: usize, col: usize) -> &[f32] {
        let wl = self.window_len();
        let base = (row * self.width + col) * wl;
        &self.scores[base..base + wl]
    }

    /// Score at a signed offset (dy, dx) with |dy|, |dx| <= l_r.
    pub fn at_offset(&self, row: usize, col: usize, dy: i64, dx: i64) -> f32 {
        let side = (2 * self.l_r + 1) as i64;
        let o = (dy + self.l_r as i64) * side + dx + self.l_r as i64;
        self.pixel_scores(row, col)[o as usize]
    }
}

fn check_pair(f1: &FeatureMap, f2: &FeatureMap, l_r: usize) -> Result<()> {
    if f1.level != f2.level
        || f1.channels != f2.channels
        || f1.height != f2.height
        || f1.width != f2.width
    {
        return Err(Error::invalid(
            "local volume: feature maps must share level, shape and channels".to_string(),
        ));
    }
    if l_r < 1 {
        return Err(Error::invalid("local volume: l_r must be >= 1".to_string()));
    }
    Ok(())
}

/// Builds the zero-centered local cost volume: correlation of each pixel
/// against the target window around the same position, zero for out-of-grid
/// targets.
pub fn build_local_volume(f1: &FeatureMap, f2: &FeatureMap, l_r: usize) -> Result<LocalCostVolume> {
    check_pair(f1, f2, l_r)?;
    let (h, w) = (f1.height, f1.width);
    let side = 2 * l_r + 1;
    let wl = side * side;
    let p1 = PixelMajor::from_map(f1);
    let p2 = PixelMajor::from_map(f2);
    let mut scores = vec![0.0f32; h * w * wl];
    scores
        .par_chunks_mut(w * wl)
        .enumerate()
        .for_each(|(row, chunk)| {
            for col in 0..w {
                let anchor = p1.descriptor(row, col);
                let base = col * wl;
                for dy in -(l_r as i64)..=l_r as i64 {
                    for dx in -(l_r as i64)..=l_r as i64 {
                        let (ty, tx) = (row as i64 + dy, col as i64 + dx);
                        let o = ((dy + l_r as i64) * side as i64 + dx + l_r as i64) as usize;
                        if ty >= 0 && tx >= 0 && (ty as usize) < h && (tx as usize) < w {
                            chunk[base + o] =
                                dot_normalized(anchor, p2.descriptor(ty as usize, tx as usize));
                        }
                    }
                }
            }
        });
    Ok(LocalCostVolume::new(h, w, l_r, scores))
}

/// Local correlation window recentered at the current flow estimate.
///
/// Entry (h, w, (dy, dx)) correlates the source descriptor against the
/// target map bilinearly sampled at `(w + u + dx, h + v + dy)`; with zero
/// flow this equals [`build_local_volume`] bit for bit.
pub fn lookup_local_at_flow(
    f1: &FeatureMap,
    f2: &FeatureMap,
    flow: &FlowField,
    l_r: usize,
) -> Result<Tensor> {
    check_pair(f1, f2, l_r)?;
    if flow.height != f1.height || flow.width != f1.width {
        return Err(Error::invalid(
            "lookup_local_at_flow: flow extents must match the feature maps".to_string(),
        ));
    }
    if flow.u.iter().chain(flow.v.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("lookup_local_at_flow: flow must be finite".to_string()));
    }
    let (h, w) = (f1.height, f1.width);
    let side = 2 * l_r + 1;
    let wl = side * side;
    let p1 = PixelMajor::from_map(f1);
    let c = f1.channels;
    let mut scores = vec![0.0f32; h * w * wl];
    scores
        .par_chunks_mut(w * wl)
        .enumerate()
        .for_each(|(row, chunk)| {
            let mut sampled = vec![0.0f32; c];
            for col in 0..w {
                let anchor = p1.descriptor(row, col);
                let base = col * wl;
                let u = flow.u[row * w + col];
                let v = flow.v[row * w + col];
                for dy in -(l_r as i64)..=l_r as i64 {
                    for dx in -(l_r as i64)..=l_r as i64 {
                        let o = ((dy + l_r as i64) * side as i64 + dx + l_r as i64) as usize;
                        let x = col as f32 + u + dx as f32;
                        let y = row as f32 + v + dy as f32;
                        bilinear_sample_into(&f2.data, x, y, &mut sampled);
                        chunk[base + o] = dot_normalized(anchor, &sampled);
                    }
                }
            }
        });
    Ok(Tensor::new(vec![h, w, wl], scores).expect("shape by construction"))
}
