//! Independent reference implementations used by the embedded selfcheck
//! suite and the test oracles.
//!
//! Everything here recomputes results through the most literal route
//! available (dense enumeration, full sorts, nested loops) and stays
//! independent of the streaming/selective paths it checks.

use crate::error::Result;
use crate::features::{FeatureMap, DESCRIPTOR_CHANNELS};
use crate::global_cost::{Axis, TopkCostVolume};
use crate::local_cost::LocalCostVolume;
use crate::numerics::SENTINEL;
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

/// Grid of random unit descriptors; deterministic in `seed`.
pub fn random_unit_feature_grid(height: usize, width: usize, level: usize, seed: u64) -> FeatureMap {
    let c = DESCRIPTOR_CHANNELS;
    let plane = height * width;
    let mut rng = SplitMix64::new(seed);
    let mut data = vec![0.0f32; c * plane];
    for p in 0..plane {
        let mut v = [0.0f32; DESCRIPTOR_CHANNELS];
        let mut norm_sq = 0.0f32;
        while norm_sq < 1e-6 {
            norm_sq = 0.0;
            for x in v.iter_mut() {
                *x = rng.range_f32(-1.0, 1.0);
                norm_sq += *x * *x;
            }
        }
        let inv = 1.0 / norm_sq.sqrt();
        for (ch, x) in v.iter().enumerate() {
            data[ch * plane + p] = x * inv;
        }
    }
    FeatureMap::from_tensor(
        level,
        Tensor::new(vec![c, height, width], data).expect("shape by construction"),
    )
    .expect("rank 3 by construction")
}

/// Grid assigning pixel (y, x) the basis vector e_((3y + x) mod C).
///
/// Within any lookup window the center is the unique self-match and every
/// other pairwise correlation is exactly zero, which makes soft-argmax fixed
/// points exact and testable.
pub fn basis_feature_grid(height: usize, width: usize, level: usize) -> FeatureMap {
    let c = DESCRIPTOR_CHANNELS;
    let plane = height * width;
    let mut data = vec![0.0f32; c * plane];
    for y in 0..height {
        for x in 0..width {
            let ch = (3 * y + x) % c;
            data[ch * plane + y * width + x] = 1.0;
        }
    }
    FeatureMap::from_tensor(
        level,
        Tensor::new(vec![c, height, width], data).expect("shape by construction"),
    )
    .expect("rank 3 by construction")
}

/// Grid assigning pixel (y, x) the vector `sign * e_(idx mod C)` with
/// `idx = (5y + x) mod 2C` and sign negative for `idx >= C`.
///
/// Doubles the collision period of [`basis_feature_grid`]: no two positions
/// within reach of a radius-2 window displaced by a few columns share a
/// +1 correlation, so shift-recovery fixed points stay unique.
pub fn signed_basis_grid(height: usize, width: usize, level: usize) -> FeatureMap {
    let c = DESCRIPTOR_CHANNELS;
    let plane = height * width;
    let mut data = vec![0.0f32; c * plane];
    for y in 0..height {
        for x in 0..width {
            let idx = (5 * y + x) % (2 * c);
            let sign = if idx < c { 1.0 } else { -1.0 };
            data[(idx % c) * plane + y * width + x] = sign;
        }
    }
    FeatureMap::from_tensor(
        level,
        Tensor::new(vec![c, height, width], data).expect("shape by construction"),
    )
    .expect("rank 3 by construction")
}

/// Straight-line normalized correlation; reimplemented here so volume checks
/// do not share code with the builders.
fn corr_at(f1: &FeatureMap, f2: &FeatureMap, row1: usize, col1: usize, row2: usize, col2: usize) -> f32 {
    let c = f1.channels;
    let mut a = vec![0.0f32; c];
    let mut b = vec![0.0f32; c];
    f1.descriptor_into(row1, col1, &mut a);
    f2.descriptor_into(row2, col2, &mut b);
    let mut acc = 0.0f32;
    for ch in 0..c {
        acc += a[ch] * b[ch];
    }
    acc / (c as f32).sqrt()
}

/// Full-sort top-k oracle: sort (score desc, index asc), truncate.
pub fn topk_full_sort(values: &[f32], k: usize) -> (Vec<f32>, Vec<u32>) {
    let mut pairs: Vec<(f32, u32)> = values
        .iter()
        .enumerate()
        .map(|(i, &v)| (v, i as u32))
        .collect();
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    pairs.truncate(k);
    (
        pairs.iter().map(|p| p.0).collect(),
        pairs.iter().map(|p| p.1).collect(),
    )
}

/// Checks a built top-k volume against dense enumeration plus full sort.
/// Scores and indices must match exactly.
pub fn check_topk_volume_dense(
    f1: &FeatureMap,
    f2: &FeatureMap,
    vol: &TopkCostVolume,
) -> std::result::Result<(), String> {
    let (h, w) = (f1.height, f1.width);
    let candidates = match vol.axis {
        Axis::Horizontal => h,
        Axis::Vertical => w,
    };
    let mut line = vec![0.0f32; candidates];
    for row in 0..h {
        for col in 0..w {
            for j in 0..2 * vol.d_max {
                let d = j as i64 - vol.d_max as i64;
                let (pos, extent) = match vol.axis {
                    Axis::Horizontal => (col as i64, w as i64),
                    Axis::Vertical => (row as i64, h as i64),
                };
                let target = pos + d;
                let in_grid = target >= 0 && target < extent;
                if vol.is_valid(row, col, j) != in_grid {
                    return Err(format!(
                        "validity mismatch at ({row},{col},d={d}) on {}",
                        vol.axis.name()
                    ));
                }
                if !in_grid {
                    if vol.slot_scores(row, col, j).iter().any(|&s| s != SENTINEL) {
                        return Err(format!(
                            "invalid slot ({row},{col},d={d}) not sentinel-filled"
                        ));
                    }
                    continue;
                }
                let t = target as usize;
                for (i, c) in line.iter_mut().enumerate() {
                    *c = match vol.axis {
                        Axis::Horizontal => corr_at(f1, f2, row, col, i, t),
                        Axis::Vertical => corr_at(f1, f2, row, col, t, i),
                    };
                }
                let (scores, indices) = topk_full_sort(&line, vol.k);
                if vol.slot_scores(row, col, j) != scores.as_slice()
                    || vol.slot_indices(row, col, j) != indices.as_slice()
                {
                    return Err(format!(
                        "top-k mismatch at ({row},{col},d={d}) on {}: got {:?}/{:?}, want {:?}/{:?}",
                        vol.axis.name(),
                        vol.slot_scores(row, col, j),
                        vol.slot_indices(row, col, j),
                        scores,
                        indices
                    ));
                }
            }
        }
    }
    Ok(())
}

/// Test-facing wrapper that panics with the mismatch description.
pub fn assert_topk_volume_matches_dense(
    f1: &FeatureMap,
    f2: &FeatureMap,
    vol: &TopkCostVolume,
) -> Result<()> {
    if let Err(msg) = check_topk_volume_dense(f1, f2, vol) {
        panic!("{msg}");
    }
    Ok(())
}

/// Five-nested-loop local volume oracle with explicit zero padding.
pub fn local_volume_loops(f1: &FeatureMap, f2: &FeatureMap, l_r: usize) -> Vec<f32> {
    let (h, w) = (f1.height, f1.width);
    let side = 2 * l_r + 1;
    let c = f1.channels;
    let mut out = vec![0.0f32; h * w * side * side];
    let mut a = vec![0.0f32; c];
    let mut b = vec![0.0f32; c];
    for row in 0..h {
        for col in 0..w {
            f1.descriptor_into(row, col, &mut a);
            for dy in -(l_r as i64)..=l_r as i64 {
                for dx in -(l_r as i64)..=l_r as i64 {
                    let o = ((dy + l_r as i64) * side as i64 + dx + l_r as i64) as usize;
                    let (ty, tx) = (row as i64 + dy, col as i64 + dx);
                    let score = if ty >= 0 && tx >= 0 && (ty as usize) < h && (tx as usize) < w {
                        f2.descriptor_into(ty as usize, tx as usize, &mut b);
                        let mut acc = 0.0f32;
                        for ch in 0..c {
                            acc += a[ch] * b[ch];
                        }
                        acc / (c as f32).sqrt()
                    } else {
                        0.0
                    };
                    out[(row * w + col) * side * side + o] = score;
                }
            }
        }
    }
    out
}

/// Checks a local volume against the loop oracle, exact.
pub fn check_local_volume(
    f1: &FeatureMap,
    f2: &FeatureMap,
    vol: &LocalCostVolume,
) -> std::result::Result<(), String> {
    let want = local_volume_loops(f1, f2, vol.l_r);
    if vol.scores.len() != want.len() {
        return Err(format!(
            "local volume length {} vs oracle {}",
            vol.scores.len(),
            want.len()
        ));
    }
    for (i, (g, w)) in vol.scores.iter().zip(&want).enumerate() {
        if g != w {
            return Err(format!("local volume mismatch at flat index {i}: {g} vs {w}"));
        }
    }
    Ok(())
}

/// Naive six-nested-loop conv3d oracle.
pub fn conv3d_loops(
    v: &Tensor,
    w: &Tensor,
    stride: (usize, usize, usize),
    pad: (usize, usize, usize),
) -> Tensor {
    let (cin, x, y, z) = (v.shape()[0], v.shape()[1], v.shape()[2], v.shape()[3]);
    let (cout, kx, ky, kz) = (w.shape()[0], w.shape()[2], w.shape()[3], w.shape()[4]);
    let ox = (x + 2 * pad.0 - kx) / stride.0 + 1;
    let oy = (y + 2 * pad.1 - ky) / stride.1 + 1;
    let oz = (z + 2 * pad.2 - kz) / stride.2 + 1;
    let mut out = Tensor::zeros(vec![cout, ox, oy, oz]);
    for co in 0..cout {
        for i in 0..ox {
            for j in 0..oy {
                for l in 0..oz {
                    let mut acc = 0.0f32;
                    for ci in 0..cin {
                        for a in 0..kx {
                            for b in 0..ky {
                                for c in 0..kz {
                                    let sx = (i * stride.0 + a) as i64 - pad.0 as i64;
                                    let sy = (j * stride.1 + b) as i64 - pad.1 as i64;
                                    let sz = (l * stride.2 + c) as i64 - pad.2 as i64;
                                    if sx < 0
                                        || sy < 0
                                        || sz < 0
                                        || sx as usize >= x
                                        || sy as usize >= y
                                        || sz as usize >= z
                                    {
                                        continue;
                                    }
                                    acc += v.at4(ci, sx as usize, sy as usize, sz as usize)
                                        * w.data()[(((co * cin + ci) * kx + a) * ky + b) * kz + c];
                                }
                            }
                        }
                    }
                    out.set4(co, i, j, l, acc);
                }
            }
        }
    }
    out
}

/// Scatter-accumulate transposed-conv oracle.
pub fn conv_transpose3d_scatter(
    v: &Tensor,
    w: &Tensor,
    stride: (usize, usize, usize),
    pad: (usize, usize, usize),
) -> Tensor {
    let (cout, x, y, z) = (v.shape()[0], v.shape()[1], v.shape()[2], v.shape()[3]);
    let (cin, kx, ky, kz) = (w.shape()[1], w.shape()[2], w.shape()[3], w.shape()[4]);
    let ox = (x - 1) * stride.0 + kx - 2 * pad.0;
    let oy = (y - 1) * stride.1 + ky - 2 * pad.1;
    let oz = (z - 1) * stride.2 + kz - 2 * pad.2;
    let mut out = Tensor::zeros(vec![cin, ox, oy, oz]);
    for co in 0..cout {
        for i in 0..x {
            for j in 0..y {
                for l in 0..z {
                    let val = v.at4(co, i, j, l);
                    for ci in 0..cin {
                        for a in 0..kx {
                            for b in 0..ky {
                                for c in 0..kz {
                                    let tx = (i * stride.0 + a) as i64 - pad.0 as i64;
                                    let ty = (j * stride.1 + b) as i64 - pad.1 as i64;
                                    let tz = (l * stride.2 + c) as i64 - pad.2 as i64;
                                    if tx < 0
                                        || ty < 0
                                        || tz < 0
                                        || tx as usize >= ox
                                        || ty as usize >= oy
                                        || tz as usize >= oz
                                    {
                                        continue;
                                    }
                                    let wv =
                                        w.data()[(((co * cin + ci) * kx + a) * ky + b) * kz + c];
                                    let cur = out.at4(ci, tx as usize, ty as usize, tz as usize);
                                    out.set4(
                                        ci,
                                        tx as usize,
                                        ty as usize,
                                        tz as usize,
                                        cur + val * wv,
                                    );
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// One named check of the embedded selfcheck suite.
#[derive(Debug)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub error: Option<String>,
}

impl CheckOutcome {
    fn ok(name: &'static str) -> Self {
        CheckOutcome { name, error: None }
    }

    fn fail(name: &'static str, error: String) -> Self {
        CheckOutcome {
            name,
            error: Some(error),
        }
    }

    pub fn passed(&self) -> bool {
        self.error.is_none()
    }
}

/// Runs the embedded oracle equivalence suites: top-k selection, top-k
/// volumes on both axes, local volumes, aggregation, and the conv adjoint.
pub fn run_selfcheck() -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    out.push(selfcheck_topk());
    out.push(selfcheck_topk_volumes());
    out.push(selfcheck_local_volumes());
    out.push(selfcheck_aggregation_mean());
    out.push(selfcheck_aggregation_stack());
    out.push(selfcheck_conv_adjoint());
    out
}

fn selfcheck_topk() -> CheckOutcome {
    let name = "topk-vs-full-sort";
    let mut rng = SplitMix64::new(0x7097);
    for case in 0..200 {
        let n = 1 + rng.below(64) as usize;
        let k = 1 + rng.below(n as u64) as usize;
        let mut values: Vec<f32> = (0..n).map(|_| rng.range_f32(-1.0, 1.0)).collect();
        // inject ties
        if n > 3 {
            values[2] = values[0];
        }
        let got = match crate::numerics::topk(&values, k) {
            Ok(g) => g,
            Err(e) => return CheckOutcome::fail(name, format!("case {case}: {e}")),
        };
        let (scores, indices) = topk_full_sort(&values, k);
        if got.scores != scores || got.indices != indices {
            return CheckOutcome::fail(name, format!("case {case}: mismatch"));
        }
    }
    CheckOutcome::ok(name)
}

fn selfcheck_topk_volumes() -> CheckOutcome {
    let name = "topk-volume-vs-dense";
    let mut rng = SplitMix64::new(0x70c4);
    for case in 0..12 {
        let h = 3 + rng.below(6) as usize;
        let w = 3 + rng.below(6) as usize;
        let f1 = random_unit_feature_grid(h, w, 16, 1000 + case);
        let f2 = random_unit_feature_grid(h, w, 16, 2000 + case);
        for axis in [Axis::Horizontal, Axis::Vertical] {
            let cap = match axis {
                Axis::Horizontal => h,
                Axis::Vertical => w,
            };
            for k in [1usize, 2, 4] {
                if k > cap {
                    continue;
                }
                let d = 1 + rng.below(4) as usize;
                let vol = match crate::global_cost::build_topk_volume(&f1, &f2, axis, d, k) {
                    Ok(v) => v,
                    Err(e) => return CheckOutcome::fail(name, format!("case {case}: {e}")),
                };
                if let Err(msg) = check_topk_volume_dense(&f1, &f2, &vol) {
                    return CheckOutcome::fail(name, format!("case {case}: {msg}"));
                }
            }
        }
    }
    CheckOutcome::ok(name)
}

fn selfcheck_local_volumes() -> CheckOutcome {
    let name = "local-volume-vs-loops";
    let mut rng = SplitMix64::new(0x10ca1);
    for case in 0..12 {
        let h = 4 + rng.below(10) as usize;
        let w = 4 + rng.below(10) as usize;
        let f1 = random_unit_feature_grid(h, w, 8, 3000 + case);
        let f2 = random_unit_feature_grid(h, w, 8, 4000 + case);
        for l_r in [1usize, 2, 4] {
            let vol = match crate::local_cost::build_local_volume(&f1, &f2, l_r) {
                Ok(v) => v,
                Err(e) => return CheckOutcome::fail(name, format!("case {case}: {e}")),
            };
            if let Err(msg) = check_local_volume(&f1, &f2, &vol) {
                return CheckOutcome::fail(name, format!("case {case} l_r={l_r}: {msg}"));
            }
        }
    }
    CheckOutcome::ok(name)
}

fn selfcheck_aggregation_mean() -> CheckOutcome {
    let name = "aggregation-averaging-vs-k-mean";
    let f1 = random_unit_feature_grid(6, 6, 16, 51);
    let f2 = random_unit_feature_grid(6, 6, 16, 52);
    let k = 3;
    let vol = match crate::global_cost::build_topk_volume(&f1, &f2, Axis::Horizontal, 2, k) {
        Ok(v) => v,
        Err(e) => return CheckOutcome::fail(name, e.to_string()),
    };
    let agg = match crate::weights::aggregate(&vol, &crate::weights::AggWeights::averaging(k)) {
        Ok(a) => a,
        Err(e) => return CheckOutcome::fail(name, e.to_string()),
    };
    for row in 0..6 {
        for col in 0..6 {
            for j in 0..2 * vol.d_max {
                let got = agg.scores[agg.slot(row, col, j)];
                if !vol.is_valid(row, col, j) {
                    if got != SENTINEL {
                        return CheckOutcome::fail(name, "invalid slot not sentinel".to_string());
                    }
                    continue;
                }
                let s = vol.slot_scores(row, col, j);
                let mut mean = 0.0f32;
                for &x in s {
                    mean += x;
                }
                mean /= k as f32;
                if (got - mean).abs() > 1e-6 {
                    return CheckOutcome::fail(name, format!("mean mismatch: {got} vs {mean}"));
                }
            }
        }
    }
    CheckOutcome::ok(name)
}

fn selfcheck_aggregation_stack() -> CheckOutcome {
    let name = "aggregation-stack-vs-layer-oracle";
    let mut rng = SplitMix64::new(0xa66);
    let k = 2;
    let f1 = random_unit_feature_grid(4, 4, 16, 61);
    let f2 = random_unit_feature_grid(4, 4, 16, 62);
    let vol = match crate::global_cost::build_topk_volume(&f1, &f2, Axis::Vertical, 2, k) {
        Ok(v) => v,
        Err(e) => return CheckOutcome::fail(name, e.to_string()),
    };
    let weights = crate::weights::AggWeights::random_stack(k, &mut rng);
    let got = match crate::weights::aggregate(&vol, &weights) {
        Ok(a) => a,
        Err(e) => return CheckOutcome::fail(name, e.to_string()),
    };
    // layer-by-layer oracle on the dense zero-filled input
    let mut cur = crate::weights::dense_topk_input(&vol);
    for layer in &weights.layers {
        cur = match layer.kind {
            crate::weights::LayerKind::Conv3d => {
                conv3d_loops(&cur, &layer.weights, layer.stride, layer.padding)
            }
            crate::weights::LayerKind::ConvTranspose3d => {
                conv_transpose3d_scatter(&cur, &layer.weights, layer.stride, layer.padding)
            }
        };
        layer.apply_bias_activation(&mut cur);
    }
    let two_d = 2 * vol.d_max;
    for row in 0..vol.height {
        for col in 0..vol.width {
            for j in 0..two_d {
                let g = got.scores[got.slot(row, col, j)];
                if !vol.is_valid(row, col, j) {
                    if g != SENTINEL {
                        return CheckOutcome::fail(name, "invalid slot not sentinel".to_string());
                    }
                    continue;
                }
                let w = cur.at4(0, row, col, j);
                if (g - w).abs() > 1e-5 {
                    return CheckOutcome::fail(name, format!("stack mismatch: {g} vs {w}"));
                }
            }
        }
    }
    CheckOutcome::ok(name)
}

fn selfcheck_conv_adjoint() -> CheckOutcome {
    let name = "conv-transpose-adjoint";
    let mut rng = SplitMix64::new(0xadd);
    let a = Tensor::new(
        vec![2, 5, 4, 5],
        (0..2 * 100).map(|_| rng.range_f32(-1.0, 1.0)).collect(),
    )
    .expect("shape");
    let w = Tensor::new(
        vec![3, 2, 3, 3, 3],
        (0..3 * 2 * 27).map(|_| rng.range_f32(-1.0, 1.0)).collect(),
    )
    .expect("shape");
    let stride = (2, 1, 2);
    let pad = (1, 1, 1);
    let fwd = match crate::numerics::conv3d(&a, &w, stride, pad) {
        Ok(t) => t,
        Err(e) => return CheckOutcome::fail(name, e.to_string()),
    };
    let b = Tensor::new(
        fwd.shape().to_vec(),
        (0..fwd.len()).map(|_| rng.range_f32(-1.0, 1.0)).collect(),
    )
    .expect("shape");
    let bwd = match crate::numerics::conv_transpose3d(&b, &w, stride, pad) {
        Ok(t) => t,
        Err(e) => return CheckOutcome::fail(name, e.to_string()),
    };
    let lhs: f64 = fwd
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| *x as f64 * *y as f64)
        .sum();
    let rhs: f64 = a
        .data()
        .iter()
        .zip(bwd.data())
        .map(|(x, y)| *x as f64 * *y as f64)
        .sum();
    let scale = lhs.abs().max(rhs.abs()).max(1e-12);
    if ((lhs - rhs) / scale).abs() > 1e-4 {
        return CheckOutcome::fail(name, format!("adjoint mismatch: {lhs} vs {rhs}"));
    }
    CheckOutcome::ok(name)
}
