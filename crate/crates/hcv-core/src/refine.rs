//! Deterministic iterative flow refinement and cost-volume lookup.
//!
//! The update loop stands in for a learned recurrent operator: it consumes
//! the same recentered local correlation window and moves each pixel's flow
//! by the damped soft-argmax of that window.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::flow::FlowField;
use crate::global_cost::{dot_normalized, AggregatedCostVolume, PixelMajor};
use crate::numerics::{bilinear_sample_into, masked_softmax};
use crate::tensor::Tensor;

/// Per-pixel 1D samples of both aggregated global volumes around the current
/// flow: `[H, W, 2*(2*r_g+1)]`, horizontal block first.
#[derive(Debug, Clone)]
pub struct GlobalLookupFeatures {
    pub height: usize,
    pub width: usize,
    pub r_g: usize,
    pub data: Tensor,
}

/// Samples the aggregated score arrays along the displacement axis at
/// `u + delta` (horizontal) and `v + delta` (vertical) for
/// `delta in [-r_g, r_g]`, with linear interpolation; positions outside the
/// displacement range or hitting invalid slots contribute zero.
pub fn lookup_global(
    c_h: &AggregatedCostVolume,
    c_v: &AggregatedCostVolume,
    flow: &FlowField,
    r_g: usize,
) -> Result<GlobalLookupFeatures> {
    if c_h.height != c_v.height || c_h.width != c_v.width {
        return Err(Error::invalid(
            "lookup_global: aggregated volumes must share extents".to_string(),
        ));
    }
    if flow.height != c_h.height || flow.width != c_h.width {
        return Err(Error::invalid(
            "lookup_global: flow extents must match the volumes".to_string(),
        ));
    }
    let (h, w) = (c_h.height, c_h.width);
    let taps = 2 * r_g + 1;
    let mut data = vec![0.0f32; h * w * 2 * taps];
    data.par_chunks_mut(w * 2 * taps)
        .enumerate()
        .for_each(|(row, chunk)| {
            for col in 0..w {
                let base = col * 2 * taps;
                let p = row * w + col;
                for t in 0..taps {
                    let delta = t as f32 - r_g as f32;
                    chunk[base + t] = sample_axis(c_h, row, col, flow.u[p] + delta);
                    chunk[base + taps + t] = sample_axis(c_v, row, col, flow.v[p] + delta);
                }
            }
        });
    Ok(GlobalLookupFeatures {
        height: h,
        width: w,
        r_g,
        data: Tensor::new(vec![h, w, 2 * taps], data).expect("shape by construction"),
    })
}

/// Linear interpolation along the displacement axis at continuous
/// displacement `d`; invalid or out-of-range taps contribute zero.
fn sample_axis(vol: &AggregatedCostVolume, row: usize, col: usize, d: f32) -> f32 {
    let pos = d + vol.d_max as f32; // continuous ordinal
    let j0 = pos.floor();
    let f = pos - j0;
    let j0 = j0 as i64;
    let two_d = 2 * vol.d_max as i64;
    let mut acc = 0.0f32;
    if j0 >= 0 && j0 < two_d && vol.is_valid(row, col, j0 as usize) {
        acc += (1.0 - f) * vol.pixel_scores(row, col)[j0 as usize];
    }
    if j0 + 1 >= 0 && j0 + 1 < two_d && vol.is_valid(row, col, (j0 + 1) as usize) {
        acc += f * vol.pixel_scores(row, col)[(j0 + 1) as usize];
    }
    acc
}

/// Clamped center-aligned bilinear upsampling shared by the flow rescalers:
/// output pixel (y, x) samples the source at `((x+0.5)/s - 0.5, ...)` with
/// coordinates clamped to the grid, and components scaled by `s`.
fn upsample_components(
    flow: &FlowField,
    scale: usize,
    out_h: usize,
    out_w: usize,
    out_level: usize,
) -> FlowField {
    let map = flow.to_tensor();
    let (sh, sw) = (flow.height, flow.width);
    let mut u = vec![0.0f32; out_h * out_w];
    let mut v = vec![0.0f32; out_h * out_w];
    let s = scale as f32;
    let mut sample = [0.0f32; 2];
    for y in 0..out_h {
        for x in 0..out_w {
            let sx = (((x as f32 + 0.5) / s) - 0.5).clamp(0.0, (sw - 1) as f32);
            let sy = (((y as f32 + 0.5) / s) - 0.5).clamp(0.0, (sh - 1) as f32);
            bilinear_sample_into(&map, sx, sy, &mut sample);
            u[y * out_w + x] = s * sample[0];
            v[y * out_w + x] = s * sample[1];
        }
    }
    FlowField {
        height: out_h,
        width: out_w,
        level: out_level,
        u,
        v,
        valid: None,
    }
}

/// Upsamples the level-16 initial flow to the level-8 grid, doubling the
/// components.
pub fn seed_from_init(f_init: &FlowField, out_h: usize, out_w: usize) -> FlowField {
    upsample_components(f_init, 2, out_h, out_w, 8)
}

/// Upsamples a level-8 flow to full resolution, scaling components by 8.
pub fn upsample_flow(flow: &FlowField, out_h: usize, out_w: usize) -> FlowField {
    upsample_components(flow, 8, out_h, out_w, 1)
}

/// Annealed per-step temperature: 8x the terminal value for the first two
/// steps, 4x through two thirds of the run, terminal after.
pub(crate) fn step_temperature(step: usize, iters: usize, temperature: f32) -> f32 {
    let warm = 2.min(iters.saturating_sub(1));
    let mid = (2 * iters) / 3;
    if step < warm {
        temperature * 8.0
    } else if step < mid {
        temperature * 4.0
    } else {
        temperature
    }
}

/// Soft-argmax expectation over the cross neighborhood of the window's
/// best cell; `scores` is one (2*l_r+1)^2 window. Shared by both local
/// correlation paths.
pub(crate) fn window_expected_offset(
    scores: &[f32],
    mask: &mut [bool],
    side: usize,
    temperature: f32,
) -> (f32, f32) {
    let mut best = (f32::NEG_INFINITY, 0usize);
    for (o, &s) in scores.iter().enumerate() {
        if s > best.0 {
            best = (s, o);
        }
    }
    let (by, bx) = ((best.1 / side) as i64, (best.1 % side) as i64);
    for m in mask.iter_mut() {
        *m = false;
    }
    for (dy, dx) in [(0i64, 0i64), (-1, 0), (1, 0), (0, -1), (0, 1)] {
        let (y, x) = (by + dy, bx + dx);
        if y >= 0 && x >= 0 && y < side as i64 && x < side as i64 {
            mask[(y * side as i64 + x) as usize] = true;
        }
    }
    let probs =
        masked_softmax(scores, mask, temperature).expect("argmax neighborhood is non-empty");
    let l_r = (side / 2) as f32;
    let (mut du, mut dv) = (0.0f32, 0.0f32);
    for (o, &pr) in probs.iter().enumerate() {
        du += ((o % side) as f32 - l_r) * pr;
        dv += ((o / side) as f32 - l_r) * pr;
    }
    (du, dv)
}

/// Damped soft-argmax refinement loop.
///
/// Starting from `f_seed`, each iteration recomputes the recentered local
/// correlation window of every pixel, masks the softmax to the cross
/// neighborhood of the window's best cell, and moves the flow by `damping`
/// times the expected offset under an annealed temperature (8x -> 4x -> 1x
/// of the terminal value). The mask keeps the expectation on the
/// correlation peak: the full window would mix in the long tail of ambient
/// scores, whose Boltzmann mass either drowns the peak (warm softmax) or
/// freezes the iteration short of the sub-cell optimum (cold softmax).
/// Returns one field per iteration.
pub fn refine_flow(
    f1: &FeatureMap,
    f2: &FeatureMap,
    f_seed: &FlowField,
    iters: usize,
    l_r: usize,
    temperature: f32,
    damping: f32,
) -> Result<Vec<FlowField>> {
    if iters < 1 {
        return Err(Error::invalid("refine_flow: iters must be >= 1".to_string()));
    }
    if !(0.0..=1.0).contains(&damping) {
        return Err(Error::invalid(format!(
            "refine_flow: damping must lie in [0, 1], got {damping}"
        )));
    }
    if !(temperature > 0.0) {
        return Err(Error::invalid(format!(
            "refine_flow: temperature must be positive, got {temperature}"
        )));
    }
    if f_seed.height != f1.height || f_seed.width != f1.width {
        return Err(Error::invalid(
            "refine_flow: seed extents must match the feature maps".to_string(),
        ));
    }
    let (h, w) = (f1.height, f1.width);
    let side = 2 * l_r + 1;
    let wl = side * side;
    let p1 = PixelMajor::from_map(f1);
    let c = f1.channels;

    let mut sequence = Vec::with_capacity(iters);
    let mut current = f_seed.clone();
    current.level = 8;
    for step in 0..iters {
        // three-phase schedule: hot for coarse travel, mid to traverse the
        // sub-cell distance, cold to settle the balance
        let step_temperature = step_temperature(step, iters, temperature);
        let mut next_u = vec![0.0f32; h * w];
        let mut next_v = vec![0.0f32; h * w];
        next_u
            .par_chunks_mut(w)
            .zip(next_v.par_chunks_mut(w))
            .enumerate()
            .for_each(|(row, (nu, nv))| {
                let mut sampled = vec![0.0f32; c];
                let mut scores = vec![0.0f32; wl];
                let mut mask = vec![false; wl];
                for col in 0..w {
                    let p = row * w + col;
                    let anchor = p1.descriptor(row, col);
                    let (u, v) = (current.u[p], current.v[p]);
                    for dy in -(l_r as i64)..=l_r as i64 {
                        for dx in -(l_r as i64)..=l_r as i64 {
                            let o = ((dy + l_r as i64) * side as i64 + dx + l_r as i64) as usize;
                            let x = col as f32 + u + dx as f32;
                            let y = row as f32 + v + dy as f32;
                            bilinear_sample_into(&f2.data, x, y, &mut sampled);
                            scores[o] = dot_normalized(anchor, &sampled);
                        }
                    }
                    // the cross mask around the best cell keeps the
                    // expectation on the peak: the axis flanks carry the
                    // sub-cell balance, the rest of the window only adds
                    // noise to it
                    let (du, dv) =
                        window_expected_offset(&scores, &mut mask, side, step_temperature);
                    nu[col] = u + damping * du;
                    nv[col] = v + damping * dv;
                }
            });
        current = FlowField {
            height: h,
            width: w,
            level: 8,
            u: next_u,
            v: next_v,
            valid: None,
        };
        sequence.push(current.clone());
    }
    Ok(sequence)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{basis_feature_grid, random_unit_feature_grid};
    use crate::tensor::BitMask;

    fn shifted_map(f: &FeatureMap, dx: usize) -> FeatureMap {
        let plane = f.height * f.width;
        let src = f.data.data();
        let mut out = vec![0.0f32; src.len()];
        for ch in 0..f.channels {
            for row in 0..f.height {
                for col in dx..f.width {
                    out[ch * plane + row * f.width + col] =
                        src[ch * plane + row * f.width + col - dx];
                }
            }
        }
        FeatureMap::from_tensor(
            f.level,
            Tensor::new(vec![f.channels, f.height, f.width], out).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn self_match_is_a_fixed_point() {
        // orthogonal-basis features: every off-center window correlation is
        // exactly zero, so the soft-argmax of the centered peak is exactly 0
        let f = basis_feature_grid(8, 8, 8);
        let seed = FlowField::zeros(8, 8, 8);
        let seq = refine_flow(&f, &f, &seed, 6, 2, 0.05, 0.8).unwrap();
        for step in &seq {
            for p in 0..64 {
                assert!(step.u[p].abs() < 1e-4, "u drifted: {}", step.u[p]);
                assert!(step.v[p].abs() < 1e-4, "v drifted: {}", step.v[p]);
            }
        }
    }

    #[test]
    fn recovers_integer_shift_from_zero_seed() {
        let f1 = crate::oracle::signed_basis_grid(10, 14, 8);
        let f2 = shifted_map(&f1, 2);
        let seed = FlowField::zeros(10, 14, 8);
        let seq = refine_flow(&f1, &f2, &seed, 12, 2, 0.05, 0.8).unwrap();
        let last = seq.last().unwrap();
        for row in 3..7 {
            for col in 4..10 {
                let p = row * 14 + col;
                assert!(
                    (last.u[p] - 2.0).abs() < 0.25,
                    "pixel ({row},{col}): u = {}",
                    last.u[p]
                );
                assert!(last.v[p].abs() < 0.25);
            }
        }
    }

    #[test]
    fn zero_damping_freezes_the_seed() {
        let f1 = random_unit_feature_grid(6, 6, 8, 91);
        let f2 = random_unit_feature_grid(6, 6, 8, 92);
        let mut seed = FlowField::constant(6, 6, 8, 1.25, -0.5);
        seed.level = 8;
        let seq = refine_flow(&f1, &f2, &seed, 4, 2, 1.0, 0.0).unwrap();
        for step in &seq {
            assert_eq!(step.u, seed.u);
            assert_eq!(step.v, seed.v);
        }
    }

    #[test]
    fn step_size_is_bounded_by_damping_times_radius() {
        let f1 = random_unit_feature_grid(8, 8, 8, 93);
        let f2 = random_unit_feature_grid(8, 8, 8, 94);
        let seed = FlowField::zeros(8, 8, 8);
        let damping = 0.7;
        let l_r = 3usize;
        let seq = refine_flow(&f1, &f2, &seed, 5, l_r, 0.2, damping).unwrap();
        let mut prev = seed;
        for step in seq {
            for p in 0..64 {
                let du = step.u[p] - prev.u[p];
                let dv = step.v[p] - prev.v[p];
                let bound = damping * l_r as f32 * 2.0f32.sqrt() + 1e-6;
                assert!((du * du + dv * dv).sqrt() <= bound);
            }
            prev = step;
        }
    }

    #[test]
    fn seed_from_init_scales_constant_fields() {
        let f = FlowField::constant(4, 4, 16, 1.5, -2.0);
        let up = seed_from_init(&f, 8, 8);
        assert_eq!((up.height, up.width, up.level), (8, 8, 8));
        for p in 0..64 {
            assert!((up.u[p] - 3.0).abs() < 1e-6);
            assert!((up.v[p] + 4.0).abs() < 1e-6);
        }
    }

    #[test]
    fn upsample_flow_scales_and_matches_sampling_oracle() {
        let zero = FlowField::zeros(3, 3, 8);
        let up = upsample_flow(&zero, 24, 24);
        assert!(up.u.iter().all(|&x| x == 0.0));

        let ones = FlowField::constant(3, 3, 8, 1.0, 1.0);
        let up = upsample_flow(&ones, 24, 24);
        for p in 0..24 * 24 {
            assert!((up.u[p] - 8.0).abs() < 1e-6);
            assert!((up.v[p] - 8.0).abs() < 1e-6);
        }

        let mut rng = crate::rng::SplitMix64::new(95);
        let u: Vec<f32> = (0..12).map(|_| rng.range_f32(-3.0, 3.0)).collect();
        let v: Vec<f32> = (0..12).map(|_| rng.range_f32(-3.0, 3.0)).collect();
        let f = FlowField::from_components(3, 4, 8, u, v).unwrap();
        let up = upsample_flow(&f, 23, 31);
        let map = f.to_tensor();
        for y in 0..23 {
            for x in 0..31 {
                let sx = (((x as f32 + 0.5) / 8.0) - 0.5).clamp(0.0, 3.0);
                let sy = (((y as f32 + 0.5) / 8.0) - 0.5).clamp(0.0, 2.0);
                let s = crate::numerics::bilinear_sample(&map, sx, sy);
                assert!((up.u[y * 31 + x] - 8.0 * s[0]).abs() < 1e-6);
                assert!((up.v[y * 31 + x] - 8.0 * s[1]).abs() < 1e-6);
            }
        }
    }

    fn toy_volumes(h: usize, w: usize, d: usize, seed: u64) -> (AggregatedCostVolume, AggregatedCostVolume) {
        use crate::global_cost::Axis;
        let mut rng = crate::rng::SplitMix64::new(seed);
        let two_d = 2 * d;
        let sh: Vec<f32> = (0..h * w * two_d).map(|_| rng.range_f32(-1.0, 1.0)).collect();
        let sv: Vec<f32> = (0..h * w * two_d).map(|_| rng.range_f32(-1.0, 1.0)).collect();
        (
            AggregatedCostVolume::new(Axis::Horizontal, h, w, d, sh, BitMask::new_true(h * w * two_d)),
            AggregatedCostVolume::new(Axis::Vertical, h, w, d, sv, BitMask::new_true(h * w * two_d)),
        )
    }

    #[test]
    fn lookup_global_at_zero_flow_reads_d_zero() {
        let (c_h, c_v) = toy_volumes(3, 4, 5, 96);
        let flow = FlowField::zeros(3, 4, 16);
        let looked = lookup_global(&c_h, &c_v, &flow, 0).unwrap();
        for row in 0..3 {
            for col in 0..4 {
                assert_eq!(looked.data.at3(row, col, 0), c_h.pixel_scores(row, col)[5]);
                assert_eq!(looked.data.at3(row, col, 1), c_v.pixel_scores(row, col)[5]);
            }
        }
    }

    #[test]
    fn lookup_global_out_of_range_is_zero() {
        let (c_h, c_v) = toy_volumes(3, 4, 5, 97);
        let flow = FlowField::constant(3, 4, 16, 15.0, 0.0);
        let looked = lookup_global(&c_h, &c_v, &flow, 2).unwrap();
        for row in 0..3 {
            for col in 0..4 {
                for t in 0..5 {
                    assert_eq!(looked.data.at3(row, col, t), 0.0);
                }
            }
        }
    }

    #[test]
    fn lookup_global_matches_direct_interpolation() {
        let (c_h, c_v) = toy_volumes(4, 4, 6, 98);
        let mut rng = crate::rng::SplitMix64::new(99);
        let u: Vec<f32> = (0..16).map(|_| rng.range_f32(-5.5, 4.5)).collect();
        let v: Vec<f32> = (0..16).map(|_| rng.range_f32(-5.5, 4.5)).collect();
        let flow = FlowField::from_components(4, 4, 16, u.clone(), v.clone()).unwrap();
        let r_g = 3usize;
        let looked = lookup_global(&c_h, &c_v, &flow, r_g).unwrap();
        let taps = 2 * r_g + 1;
        for row in 0..4 {
            for col in 0..4 {
                let p = row * 4 + col;
                for t in 0..taps {
                    let delta = t as f32 - r_g as f32;
                    for (axis, vol, comp) in
                        [(0usize, &c_h, u[p]), (1usize, &c_v, v[p])]
                    {
                        let pos = comp + delta + 6.0;
                        let j0 = pos.floor();
                        let frac = pos - j0;
                        let j0 = j0 as i64;
                        let s = vol.pixel_scores(row, col);
                        let mut want = 0.0f32;
                        if (0..12).contains(&j0) {
                            want += (1.0 - frac) * s[j0 as usize];
                        }
                        if (0..12).contains(&(j0 + 1)) {
                            want += frac * s[(j0 + 1) as usize];
                        }
                        let got = looked.data.at3(row, col, axis * taps + t);
                        assert!((got - want).abs() < 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn lookup_global_integer_flow_r0_is_direct_indexing() {
        let (c_h, c_v) = toy_volumes(3, 3, 4, 100);
        let flow = FlowField::constant(3, 3, 16, 2.0, -3.0);
        let looked = lookup_global(&c_h, &c_v, &flow, 0).unwrap();
        for row in 0..3 {
            for col in 0..3 {
                assert_eq!(
                    looked.data.at3(row, col, 0),
                    c_h.pixel_scores(row, col)[(2 + 4) as usize]
                );
                assert_eq!(
                    looked.data.at3(row, col, 1),
                    c_v.pixel_scores(row, col)[(-3 + 4) as usize]
                );
            }
        }
    }
}
