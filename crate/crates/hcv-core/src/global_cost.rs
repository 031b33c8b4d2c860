//! Top-k sparsified 3D global cost volumes at 1/16 resolution.
//!
//! For each pixel and each displacement along one axis, the full set of
//! candidate correlations on the target line is reduced to the K best
//! (score, index) pairs. The dense candidate vector is never materialized
//! beyond one line of scratch per worker.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::flow::FlowField;
use crate::numerics::{masked_softmax, topk_into, SENTINEL};
use crate::tensor::BitMask;

/// Search axis of a 3D global cost volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Horizontal,
    Vertical,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Horizontal => "horizontal",
            Axis::Vertical => "vertical",
        }
    }
}

/// Normalized feature correlation between pixel (u, v) of `f1` and pixel
/// (i, j) of `f2`; coordinates are (column, row).
pub fn correlation(
    f1: &FeatureMap,
    f2: &FeatureMap,
    u: usize,
    v: usize,
    i: usize,
    j: usize,
) -> Result<f32> {
    if f1.level != f2.level || f1.channels != f2.channels {
        return Err(Error::invalid(
            "correlation: feature maps must share level and channel count".to_string(),
        ));
    }
    if u >= f1.width || v >= f1.height || i >= f2.width || j >= f2.height {
        return Err(Error::invalid(format!(
            "correlation: coordinates ({u},{v})/({i},{j}) out of grid"
        )));
    }
    let c = f1.channels;
    let mut a = vec![0.0f32; c];
    let mut b = vec![0.0f32; c];
    f1.descriptor_into(v, u, &mut a);
    f2.descriptor_into(j, i, &mut b);
    Ok(dot_normalized(&a, &b))
}

/// Dot product over channels divided by sqrt(C), accumulated in channel
/// order so every caller produces identical bits.
#[inline]
pub(crate) fn dot_normalized(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc / (a.len() as f32).sqrt()
}

/// Pixel-major copy of a feature map: descriptor vectors are contiguous.
pub(crate) struct PixelMajor {
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl PixelMajor {
    pub fn from_map(m: &FeatureMap) -> Self {
        let plane = m.height * m.width;
        let src = m.data.data();
        let mut data = vec![0.0f32; plane * m.channels];
        for p in 0..plane {
            for ch in 0..m.channels {
                data[p * m.channels + ch] = src[ch * plane + p];
            }
        }
        PixelMajor {
            width: m.width,
            channels: m.channels,
            data,
        }
    }

    #[inline]
    pub fn descriptor(&self, row: usize, col: usize) -> &[f32] {
        let base = (row * self.width + col) * self.channels;
        &self.data[base..base + self.channels]
    }
}

/// Top-k sparsified 3D cost volume along one axis.
///
/// Displacement ordinal `j` encodes `d = j - d_max`, covering
/// `{-D, ..., D-1}`. Invalid displacements (target line out of grid) hold the
/// sentinel score and are marked in `valid`.
#[derive(Debug, Clone)]
pub struct TopkCostVolume {
    pub axis: Axis,
    pub height: usize,
    pub width: usize,
    /// Maximum displacement magnitude D; the d axis has 2D slots.
    pub d_max: usize,
    pub k: usize,
    /// `[H, W, 2D, K]` row-major.
    pub scores: Vec<f32>,
    /// `[H, W, 2D, K]` row-major; retained row index for the horizontal
    /// axis, column index for the vertical.
    pub indices: Vec<u32>,
    /// `[H, W, 2D]` displacement validity.
    pub valid: BitMask,
    _meter: crate::memory::TrackedAlloc,
}

impl TopkCostVolume {
    fn new(
        axis: Axis,
        height: usize,
        width: usize,
        d_max: usize,
        k: usize,
        scores: Vec<f32>,
        indices: Vec<u32>,
        valid: BitMask,
    ) -> Self {
        let slots = height * width * 2 * d_max;
        // storage bound: exactly H*W*2D*K scores + as many indices + H*W*2D mask bits
        assert_eq!(scores.len(), slots * k, "top-k score storage bound violated");
        assert_eq!(indices.len(), slots * k, "top-k index storage bound violated");
        assert_eq!(valid.len(), slots, "top-k mask storage bound violated");
        let meter = crate::memory::TrackedAlloc::new(
            4 * (scores.len() as u64) + 4 * (indices.len() as u64) + valid.byte_len() as u64,
        );
        TopkCostVolume {
            axis,
            height,
            width,
            d_max,
            k,
            scores,
            indices,
            valid,
            _meter: meter,
        }
    }

    #[inline]
    pub fn slot(&self, row: usize, col: usize, j: usize) -> usize {
        (row * self.width + col) * 2 * self.d_max + j
    }

    /// K retained scores of one (pixel, displacement) slot.
    #[inline]
    pub fn slot_scores(&self, row: usize, col: usize, j: usize) -> &[f32] {
        let s = self.slot(row, col, j) * self.k;
        &self.scores[s..s + self.k]
    }

    #[inline]
    pub fn slot_indices(&self, row: usize, col: usize, j: usize) -> &[u32] {
        let s = self.slot(row, col, j) * self.k;
        &self.indices[s..s + self.k]
    }

    pub fn is_valid(&self, row: usize, col: usize, j: usize) -> bool {
        self.valid.get(self.slot(row, col, j))
    }
}

/// Whether displacement ordinal `j` targets an in-grid line for a pixel at
/// `pos` on an axis of extent `extent`.
#[inline]
fn displacement_target(pos: usize, j: usize, d_max: usize, extent: usize) -> Option<usize> {
    let t = pos as i64 + j as i64 - d_max as i64;
    if t >= 0 && (t as usize) < extent {
        Some(t as usize)
    } else {
        None
    }
}

/// Builds the top-k cost volume for one axis per the dense column/row
/// correlation followed by exact top-k selection.
///
/// Streaming contract: only one candidate line per worker is live at a time.
pub fn build_topk_volume(
    f1: &FeatureMap,
    f2: &FeatureMap,
    axis: Axis,
    d_max: usize,
    k: usize,
) -> Result<TopkCostVolume> {
    if f1.level != f2.level
        || f1.channels != f2.channels
        || f1.height != f2.height
        || f1.width != f2.width
    {
        return Err(Error::invalid(
            "build_topk_volume: feature maps must share level, shape and channels".to_string(),
        ));
    }
    if d_max < 1 {
        return Err(Error::invalid("build_topk_volume: D must be >= 1".to_string()));
    }
    let (h, w) = (f1.height, f1.width);
    let candidates = match axis {
        Axis::Horizontal => h,
        Axis::Vertical => w,
    };
    if k == 0 || k > candidates {
        return Err(Error::invalid(format!(
            "build_topk_volume: K={k} exceeds candidate count {candidates} on the {} axis",
            axis.name()
        )));
    }

    let p1 = PixelMajor::from_map(f1);
    let p2 = PixelMajor::from_map(f2);
    let two_d = 2 * d_max;

    // Validity depends only on geometry; fill it up front.
    let mut valid = BitMask::new_false(h * w * two_d);
    for row in 0..h {
        for col in 0..w {
            for j in 0..two_d {
                let pos = match axis {
                    Axis::Horizontal => col,
                    Axis::Vertical => row,
                };
                let extent = match axis {
                    Axis::Horizontal => w,
                    Axis::Vertical => h,
                };
                if displacement_target(pos, j, d_max, extent).is_some() {
                    valid.set((row * w + col) * two_d + j, true);
                }
            }
        }
    }

    let mut scores = vec![SENTINEL; h * w * two_d * k];
    let mut indices = vec![0u32; h * w * two_d * k];
    let row_len = w * two_d * k;
    scores
        .par_chunks_mut(row_len)
        .zip(indices.par_chunks_mut(row_len))
        .enumerate()
        .for_each(|(row, (score_row, index_row))| {
            // per-worker scratch: one candidate line plus the top-k buffers
            let mut line = vec![0.0f32; candidates];
            let mut sel_scores = Vec::with_capacity(k);
            let mut sel_indices = Vec::with_capacity(k);
            for col in 0..w {
                let anchor = p1.descriptor(row, col);
                for j in 0..two_d {
                    let target = match axis {
                        Axis::Horizontal => displacement_target(col, j, d_max, w),
                        Axis::Vertical => displacement_target(row, j, d_max, h),
                    };
                    let Some(t) = target else { continue };
                    match axis {
                        Axis::Horizontal => {
                            for (i, c) in line.iter_mut().enumerate() {
                                *c = dot_normalized(anchor, p2.descriptor(i, t));
                            }
                        }
                        Axis::Vertical => {
                            for (i, c) in line.iter_mut().enumerate() {
                                *c = dot_normalized(anchor, p2.descriptor(t, i));
                            }
                        }
                    }
                    topk_into(&line, k, &mut sel_scores, &mut sel_indices)
                        .expect("k <= candidates checked above");
                    let base = (col * two_d + j) * k;
                    score_row[base..base + k].copy_from_slice(&sel_scores);
                    index_row[base..base + k].copy_from_slice(&sel_indices);
                }
            }
        });

    Ok(TopkCostVolume::new(
        axis, h, w, d_max, k, scores, indices, valid,
    ))
}

/// 3D cost volume after aggregation: one score per (pixel, displacement).
#[derive(Debug, Clone)]
pub struct AggregatedCostVolume {
    pub axis: Axis,
    pub height: usize,
    pub width: usize,
    pub d_max: usize,
    /// `[H, W, 2D]` row-major; invalid slots hold the sentinel.
    pub scores: Vec<f32>,
    pub valid: BitMask,
    _meter: crate::memory::TrackedAlloc,
}

impl AggregatedCostVolume {
    pub fn new(
        axis: Axis,
        height: usize,
        width: usize,
        d_max: usize,
        scores: Vec<f32>,
        valid: BitMask,
    ) -> Self {
        assert_eq!(scores.len(), height * width * 2 * d_max);
        assert_eq!(valid.len(), scores.len());
        let meter = crate::memory::TrackedAlloc::new(
            4 * scores.len() as u64 + valid.byte_len() as u64,
        );
        AggregatedCostVolume {
            axis,
            height,
            width,
            d_max,
            scores,
            valid,
            _meter: meter,
        }
    }

    #[inline]
    pub fn slot(&self, row: usize, col: usize, j: usize) -> usize {
        (row * self.width + col) * 2 * self.d_max + j
    }

    /// Contiguous displacement scores of one pixel.
    #[inline]
    pub fn pixel_scores(&self, row: usize, col: usize) -> &[f32] {
        let base = (row * self.width + col) * 2 * self.d_max;
        &self.scores[base..base + 2 * self.d_max]
    }

    pub fn is_valid(&self, row: usize, col: usize, j: usize) -> bool {
        self.valid.get(self.slot(row, col, j))
    }
}

/// Soft-argmax regression of the initial flow from the two aggregated
/// volumes, in level-16 pixel units.
pub fn initial_flow(
    c_h: &AggregatedCostVolume,
    c_v: &AggregatedCostVolume,
    temperature: f32,
) -> Result<FlowField> {
    if c_h.height != c_v.height || c_h.width != c_v.width {
        return Err(Error::invalid(
            "initial_flow: aggregated volumes must share extents".to_string(),
        ));
    }
    let (h, w) = (c_h.height, c_h.width);
    let u = soft_argmax_axis(c_h, temperature)?;
    let v = soft_argmax_axis(c_v, temperature)?;
    let mut flow = FlowField::from_components(h, w, 16, u, v)?;
    flow.valid = None;
    Ok(flow)
}

fn soft_argmax_axis(vol: &AggregatedCostVolume, temperature: f32) -> Result<Vec<f32>> {
    let (h, w) = (vol.height, vol.width);
    let two_d = 2 * vol.d_max;
    let mut out = vec![0.0f32; h * w];
    let results: Result<Vec<Vec<f32>>> = (0..h)
        .into_par_iter()
        .map(|row| {
            let mut vals = vec![0.0f32; w];
            let mut mask = vec![false; two_d];
            for (col, slot) in vals.iter_mut().enumerate() {
                let scores = vol.pixel_scores(row, col);
                for (j, m) in mask.iter_mut().enumerate() {
                    *m = vol.is_valid(row, col, j);
                }
                let p = masked_softmax(scores, &mask, temperature)?;
                let mut acc = 0.0f32;
                for (j, &pj) in p.iter().enumerate() {
                    let d = j as f32 - vol.d_max as f32;
                    acc += d * pj;
                }
                *slot = acc;
            }
            Ok(vals)
        })
        .collect();
    for (row, vals) in results?.into_iter().enumerate() {
        out[row * w..(row + 1) * w].copy_from_slice(&vals);
    }
    Ok(out)
}
