//! Dense-tensor primitives the volume and refinement stages build on.
//!
//! Everything here is a pure function. Reductions that feed one output cell
//! run in a fixed sequential order, so callers may parallelize across cells
//! and still get bit-identical results at any thread count.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Score value used to fill invalid cost-volume slots. Most-negative finite
/// f32; softmax weight underflows to exactly zero against any real score.
pub const SENTINEL: f32 = f32::MIN;

/// The k best (score, source index) pairs of a candidate list, scores
/// non-increasing, ties broken by ascending index.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredIndexList {
    pub scores: Vec<f32>,
    pub indices: Vec<u32>,
}

impl ScoredIndexList {
    /// Checks the ordering and distinctness invariants. Used by tests and the
    /// selfcheck suite.
    pub fn check_invariants(&self) -> bool {
        if self.scores.len() != self.indices.len() {
            return false;
        }
        for i in 1..self.scores.len() {
            if self.scores[i] > self.scores[i - 1] {
                return false;
            }
            if self.scores[i] == self.scores[i - 1] && self.indices[i] <= self.indices[i - 1] {
                return false;
            }
        }
        let mut seen = self.indices.clone();
        seen.sort_unstable();
        seen.windows(2).all(|w| w[0] != w[1])
    }
}

/// Ordering used for candidate selection: higher score first, ascending
/// index on ties.
#[inline]
fn beats(score_a: f32, idx_a: u32, score_b: f32, idx_b: u32) -> bool {
    score_a > score_b || (score_a == score_b && idx_a < idx_b)
}

/// Returns the `k` largest values of `values` with their source indices.
///
/// Deterministic: equal values are ordered by ascending index, so the result
/// is independent of any upstream parallelism.
pub fn topk(values: &[f32], k: usize) -> Result<ScoredIndexList> {
    if k == 0 || k > values.len() {
        return Err(Error::invalid(format!(
            "topk: k={} out of range for {} candidates",
            k,
            values.len()
        )));
    }
    topk_into(values, k, &mut Vec::new(), &mut Vec::new())
}

/// `topk` writing through reusable scratch buffers; used by the streaming
/// volume builder to avoid per-slot allocation.
pub(crate) fn topk_into(
    values: &[f32],
    k: usize,
    scores: &mut Vec<f32>,
    indices: &mut Vec<u32>,
) -> Result<ScoredIndexList> {
    debug_assert!(values.iter().all(|v| !v.is_nan()));
    scores.clear();
    indices.clear();
    for (i, &v) in values.iter().enumerate() {
        let idx = i as u32;
        if scores.len() < k {
            // insertion sort keeps the buffer ordered; k is small
            let pos = insertion_point(scores, indices, v, idx);
            scores.insert(pos, v);
            indices.insert(pos, idx);
        } else if beats(v, idx, scores[k - 1], indices[k - 1]) {
            let pos = insertion_point(scores, indices, v, idx);
            scores.pop();
            indices.pop();
            scores.insert(pos, v);
            indices.insert(pos, idx);
        }
    }
    Ok(ScoredIndexList {
        scores: scores.clone(),
        indices: indices.clone(),
    })
}

#[inline]
fn insertion_point(scores: &[f32], indices: &[u32], v: f32, idx: u32) -> usize {
    let mut pos = scores.len();
    while pos > 0 && beats(v, idx, scores[pos - 1], indices[pos - 1]) {
        pos -= 1;
    }
    pos
}

/// Softmax over the masked-in entries of `values` at the given temperature.
///
/// Masked-out entries get probability exactly 0. Computed with
/// max-subtraction; the exponent sums are accumulated in f64 so the
/// masked-in probabilities sum to 1 well within 1e-6.
pub fn masked_softmax(values: &[f32], mask: &[bool], temperature: f32) -> Result<Vec<f32>> {
    if values.len() != mask.len() {
        return Err(Error::invalid(format!(
            "masked_softmax: {} values vs {} mask entries",
            values.len(),
            mask.len()
        )));
    }
    if !(temperature > 0.0) {
        return Err(Error::invalid(format!(
            "masked_softmax: temperature must be positive, got {temperature}"
        )));
    }
    let mut max = f32::NEG_INFINITY;
    for (v, &m) in values.iter().zip(mask) {
        if m && *v > max {
            max = *v;
        }
    }
    if max == f32::NEG_INFINITY {
        return Err(Error::EmptySupport("masked_softmax: all-false mask".into()));
    }
    let mut out = vec![0.0f32; values.len()];
    let mut sum = 0.0f64;
    for i in 0..values.len() {
        if mask[i] {
            let e = (((values[i] - max) / temperature) as f64).exp();
            out[i] = e as f32;
            sum += e;
        }
    }
    for p in out.iter_mut() {
        *p = (*p as f64 / sum) as f32;
    }
    Ok(out)
}

fn check_conv_args(volume: &Tensor, weights: &Tensor, stride: (usize, usize, usize)) -> Result<()> {
    if volume.rank() != 4 {
        return Err(Error::invalid(format!(
            "conv: volume must be rank 4, got {}",
            volume.rank()
        )));
    }
    if weights.rank() != 5 {
        return Err(Error::invalid(format!(
            "conv: weights must be rank 5, got {}",
            weights.rank()
        )));
    }
    let k = &weights.shape()[2..5];
    if k.iter().any(|&e| e % 2 == 0) {
        return Err(Error::invalid(format!("conv: kernel extents must be odd, got {k:?}")));
    }
    if stride.0 < 1 || stride.1 < 1 || stride.2 < 1 {
        return Err(Error::invalid("conv: stride must be >= 1 per axis".to_string()));
    }
    Ok(())
}

/// 3D cross-correlation with zero padding.
///
/// `volume` is `[Cin, X, Y, Z]`, `weights` `[Cout, Cin, kx, ky, kz]`; output
/// extent per axis is `floor((in + 2*pad - k)/stride) + 1`.
pub fn conv3d(
    volume: &Tensor,
    weights: &Tensor,
    stride: (usize, usize, usize),
    padding: (usize, usize, usize),
) -> Result<Tensor> {
    check_conv_args(volume, weights, stride)?;
    let (cin, x, y, z) = (
        volume.shape()[0],
        volume.shape()[1],
        volume.shape()[2],
        volume.shape()[3],
    );
    let (cout, wcin, kx, ky, kz) = (
        weights.shape()[0],
        weights.shape()[1],
        weights.shape()[2],
        weights.shape()[3],
        weights.shape()[4],
    );
    if wcin != cin {
        return Err(Error::invalid(format!(
            "conv3d: volume has {cin} channels, weights expect {wcin}"
        )));
    }
    let out_extent = |n: usize, k: usize, s: usize, p: usize| -> Result<usize> {
        let padded = n + 2 * p;
        if padded < k {
            return Err(Error::invalid(format!(
                "conv3d: kernel {k} larger than padded extent {padded}"
            )));
        }
        Ok((padded - k) / s + 1)
    };
    let ox = out_extent(x, kx, stride.0, padding.0)?;
    let oy = out_extent(y, ky, stride.1, padding.1)?;
    let oz = out_extent(z, kz, stride.2, padding.2)?;

    let vd = volume.data();
    let wd = weights.data();
    let mut out = Tensor::zeros(vec![cout, ox, oy, oz]);
    for co in 0..cout {
        for i in 0..ox {
            for j in 0..oy {
                for l in 0..oz {
                    let mut acc = 0.0f32;
                    for ci in 0..cin {
                        for a in 0..kx {
                            let sx = (i * stride.0 + a) as i64 - padding.0 as i64;
                            if sx < 0 || sx >= x as i64 {
                                continue;
                            }
                            for b in 0..ky {
                                let sy = (j * stride.1 + b) as i64 - padding.1 as i64;
                                if sy < 0 || sy >= y as i64 {
                                    continue;
                                }
                                for c in 0..kz {
                                    let sz = (l * stride.2 + c) as i64 - padding.2 as i64;
                                    if sz < 0 || sz >= z as i64 {
                                        continue;
                                    }
                                    let v = vd[((ci * x + sx as usize) * y + sy as usize) * z
                                        + sz as usize];
                                    let w = wd[(((co * cin + ci) * kx + a) * ky + b) * kz + c];
                                    acc += v * w;
                                }
                            }
                        }
                    }
                    out.set4(co, i, j, l, acc);
                }
            }
        }
    }
    Ok(out)
}

/// Transposed 3D convolution: the adjoint of [`conv3d`] with the same
/// weights, so `<conv3d(a, w), b> == <a, conv_transpose3d(b, w)>`.
///
/// `volume` is `[Cout, X, Y, Z]` (the conv3d *output* layout), `weights`
/// `[Cout, Cin, kx, ky, kz]`; output is `[Cin, (X-1)*s - 2*pad + k, ...]`.
/// Implemented as a gather over output cells so it parallelizes
/// deterministically.
pub fn conv_transpose3d(
    volume: &Tensor,
    weights: &Tensor,
    stride: (usize, usize, usize),
    padding: (usize, usize, usize),
) -> Result<Tensor> {
    check_conv_args(volume, weights, stride)?;
    let (cout, x, y, z) = (
        volume.shape()[0],
        volume.shape()[1],
        volume.shape()[2],
        volume.shape()[3],
    );
    let (wcout, cin, kx, ky, kz) = (
        weights.shape()[0],
        weights.shape()[1],
        weights.shape()[2],
        weights.shape()[3],
        weights.shape()[4],
    );
    if wcout != cout {
        return Err(Error::invalid(format!(
            "conv_transpose3d: volume has {cout} channels, weights expect {wcout}"
        )));
    }
    let out_extent = |n: usize, k: usize, s: usize, p: usize| -> Result<usize> {
        let grown = (n - 1) * s + k;
        if grown < 2 * p + 1 {
            return Err(Error::invalid(format!(
                "conv_transpose3d: padding {p} swallows the whole {grown}-wide output"
            )));
        }
        Ok(grown - 2 * p)
    };
    let ox = out_extent(x, kx, stride.0, padding.0)?;
    let oy = out_extent(y, ky, stride.1, padding.1)?;
    let oz = out_extent(z, kz, stride.2, padding.2)?;

    let vd = volume.data();
    let wd = weights.data();
    let mut out = Tensor::zeros(vec![cin, ox, oy, oz]);
    // Gather form: output cell (ci, i, j, l) pulls from input cells (co, sx, sy, sz)
    // where i = sx*stride - pad + a, i.e. sx = (i + pad - a)/stride when exact.
    let pull = |o: usize, k: usize, s: usize, p: usize, n: usize| -> Vec<(usize, usize)> {
        let mut v = Vec::with_capacity(k);
        for a in 0..k {
            let num = o as i64 + p as i64 - a as i64;
            if num < 0 || num % s as i64 != 0 {
                continue;
            }
            let src = (num / s as i64) as usize;
            if src < n {
                v.push((a, src));
            }
        }
        v
    };
    for ci in 0..cin {
        for i in 0..ox {
            let ax = pull(i, kx, stride.0, padding.0, x);
            for j in 0..oy {
                let ay = pull(j, ky, stride.1, padding.1, y);
                for l in 0..oz {
                    let az = pull(l, kz, stride.2, padding.2, z);
                    let mut acc = 0.0f32;
                    for co in 0..cout {
                        for &(a, sx) in &ax {
                            for &(b, sy) in &ay {
                                for &(c, sz) in &az {
                                    let v = vd[((co * x + sx) * y + sy) * z + sz];
                                    let w = wd[(((co * cin + ci) * kx + a) * ky + b) * kz + c];
                                    acc += v * w;
                                }
                            }
                        }
                    }
                    out.set4(ci, i, j, l, acc);
                }
            }
        }
    }
    Ok(out)
}

/// Average pooling over `factor`-sized square blocks; partial edge blocks
/// average over their valid pixels only. Output is `[C, ceil(H/f), ceil(W/f)]`.
pub fn avg_pool2d(map: &Tensor, factor: usize) -> Result<Tensor> {
    if map.rank() != 3 {
        return Err(Error::invalid(format!(
            "avg_pool2d: map must be rank 3, got {}",
            map.rank()
        )));
    }
    if factor == 0 {
        return Err(Error::invalid("avg_pool2d: factor must be >= 1".to_string()));
    }
    let (c, h, w) = (map.shape()[0], map.shape()[1], map.shape()[2]);
    let (oh, ow) = (h.div_ceil(factor), w.div_ceil(factor));
    let mut out = Tensor::zeros(vec![c, oh, ow]);
    for ch in 0..c {
        for i in 0..oh {
            let y0 = i * factor;
            let y1 = (y0 + factor).min(h);
            for j in 0..ow {
                let x0 = j * factor;
                let x1 = (x0 + factor).min(w);
                let mut acc = 0.0f32;
                for y in y0..y1 {
                    for x in x0..x1 {
                        acc += map.at3(ch, y, x);
                    }
                }
                out.set3(ch, i, j, acc / ((y1 - y0) * (x1 - x0)) as f32);
            }
        }
    }
    Ok(out)
}

/// Bilinear sample of all channels of `map` (`[C, H, W]`) at continuous
/// coordinates; out-of-grid neighbors contribute zero.
pub fn bilinear_sample(map: &Tensor, x: f32, y: f32) -> Vec<f32> {
    let c = map.shape()[0];
    let mut out = vec![0.0f32; c];
    bilinear_sample_into(map, x, y, &mut out);
    out
}

/// [`bilinear_sample`] writing into a caller-provided buffer.
#[inline]
pub fn bilinear_sample_into(map: &Tensor, x: f32, y: f32, out: &mut [f32]) {
    debug_assert_eq!(map.rank(), 3);
    let (c, h, w) = (map.shape()[0], map.shape()[1], map.shape()[2]);
    debug_assert_eq!(out.len(), c);
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let x0 = x0 as i64;
    let y0 = y0 as i64;
    let data = map.data();
    let plane = h * w;
    let w00 = (1.0 - fx) * (1.0 - fy);
    let w10 = fx * (1.0 - fy);
    let w01 = (1.0 - fx) * fy;
    let w11 = fx * fy;
    let in_grid = |xx: i64, yy: i64| xx >= 0 && yy >= 0 && (xx as usize) < w && (yy as usize) < h;
    for ch in 0..c {
        let base = ch * plane;
        let mut acc = 0.0f32;
        if in_grid(x0, y0) {
            acc += w00 * data[base + y0 as usize * w + x0 as usize];
        }
        if in_grid(x0 + 1, y0) {
            acc += w10 * data[base + y0 as usize * w + (x0 + 1) as usize];
        }
        if in_grid(x0, y0 + 1) {
            acc += w01 * data[base + (y0 + 1) as usize * w + x0 as usize];
        }
        if in_grid(x0 + 1, y0 + 1) {
            acc += w11 * data[base + (y0 + 1) as usize * w + (x0 + 1) as usize];
        }
        out[ch] = acc;
    }
}
