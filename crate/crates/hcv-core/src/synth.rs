//! Seeded synthetic image pairs with exact ground-truth flow.
//!
//! Frames sample a deterministic infinite noise field (hard tiles plus
//! smooth value-noise octaves), so the shifted frame equals the reference
//! frame shifted by construction and border regions stay textured.

use crate::error::{Error, Result};
use crate::features::Image;
use crate::flow::FlowField;
use crate::rng::SplitMix64;
use crate::tensor::BitMask;

/// Octaves of the noise field: (lattice spacing in px, amplitude, smooth).
/// Hard 8 px tiles give the pooled grids independent per-cell structure;
/// the smooth octaves add visual range without correlating distant cells.
const OCTAVES: [(i64, f32, bool); 3] = [(8, 0.60, false), (23, 0.18, true), (47, 0.10, true)];

/// Amplitude of the per-pixel high-frequency component.
const FINE_AMP: f32 = 0.05;

fn hash2(seed: u64, tag: u64, x: i64, y: i64) -> u64 {
    let mut h = SplitMix64::new(
        seed ^ tag.wrapping_mul(0x9e3779b97f4a7c15)
            ^ (x as u64).wrapping_mul(0x85ebca6b0f4c2d95)
            ^ (y as u64).wrapping_mul(0xc2b2ae3d27d4eb4f),
    );
    h.next_u64()
}

/// Lattice node value in [-1, 1].
fn node(seed: u64, octave: u64, ix: i64, iy: i64) -> f32 {
    let h = hash2(seed, octave + 1, ix, iy);
    ((h >> 40) as f32) * (2.0 / (1u64 << 24) as f32) - 1.0
}

fn smoothstep(t: f32) -> f32 {
    t * t * (3.0 - 2.0 * t)
}

/// Field value at integer pixel coordinates; defined on all of Z^2.
pub fn field_value(seed: u64, x: i64, y: i64) -> f32 {
    field_value_spec(&OCTAVES, FINE_AMP, seed, x, y)
}

/// [`field_value`] with an explicit octave spectrum.
pub fn field_value_spec(
    octaves: &[(i64, f32, bool)],
    fine_amp: f32,
    seed: u64,
    x: i64,
    y: i64,
) -> f32 {
    let mut acc = 0.0f32;
    for (oi, (spacing, amp, smooth)) in octaves.iter().enumerate() {
        let fx = x.div_euclid(*spacing);
        let fy = y.div_euclid(*spacing);
        if *smooth {
            let tx = smoothstep(x.rem_euclid(*spacing) as f32 / *spacing as f32);
            let ty = smoothstep(y.rem_euclid(*spacing) as f32 / *spacing as f32);
            let v00 = node(seed, oi as u64, fx, fy);
            let v10 = node(seed, oi as u64, fx + 1, fy);
            let v01 = node(seed, oi as u64, fx, fy + 1);
            let v11 = node(seed, oi as u64, fx + 1, fy + 1);
            let v = (1.0 - tx) * (1.0 - ty) * v00
                + tx * (1.0 - ty) * v10
                + (1.0 - tx) * ty * v01
                + tx * ty * v11;
            acc += amp * v;
        } else {
            acc += amp * node(seed, oi as u64, fx, fy);
        }
    }
    let fine = ((hash2(seed, 99, x, y) >> 40) as f32) * (2.0 / (1u64 << 24) as f32) - 1.0;
    acc + fine_amp * fine
}

fn to_u8(v: f32) -> u8 {
    (128.0 + 120.0 * v).clamp(0.0, 255.0) as u8
}

/// Generates a reference frame, the frame shifted by (shift_x, shift_y), and
/// the exact constant ground-truth flow with a validity mask excluding
/// pixels that leave the second frame.
pub fn make_synthetic_pair(
    width: usize,
    height: usize,
    shift_x: i64,
    shift_y: i64,
    seed: u64,
) -> Result<(Image, Image, FlowField)> {
    if shift_x.unsigned_abs() as usize >= width || shift_y.unsigned_abs() as usize >= height {
        return Err(Error::invalid(format!(
            "shift ({shift_x}, {shift_y}) must be smaller than the {width}x{height} extent"
        )));
    }
    let mut frame1 = vec![0u8; width * height];
    let mut frame2 = vec![0u8; width * height];
    for y in 0..height {
        for x in 0..width {
            frame1[y * width + x] = to_u8(field_value(seed, x as i64, y as i64));
            frame2[y * width + x] =
                to_u8(field_value(seed, x as i64 - shift_x, y as i64 - shift_y));
        }
    }
    let mut gt = FlowField::constant(height, width, 1, shift_x as f32, shift_y as f32);
    let mut mask = BitMask::new_false(width * height);
    for y in 0..height {
        for x in 0..width {
            let tx = x as i64 + shift_x;
            let ty = y as i64 + shift_y;
            if tx >= 0 && ty >= 0 && (tx as usize) < width && (ty as usize) < height {
                mask.set(y * width + x, true);
            }
        }
    }
    gt.valid = Some(mask);
    Ok((
        Image::new(width, height, 1, frame1)?,
        Image::new(width, height, 1, frame2)?,
        gt,
    ))
}

/// Interior evaluation mask for synthetic ground truth: valid pixels at
/// least `margin` px from the first frame's borders whose true target also
/// stays `margin` px inside the second frame. Pixels whose correspondence
/// lands in the border descriptor halo are unmatchable by any windowed
/// descriptor and are excluded from recovery metrics.
pub fn interior_eval_mask(gt: &FlowField, margin: usize) -> BitMask {
    let mut m = BitMask::new_false(gt.u.len());
    if gt.height <= 2 * margin || gt.width <= 2 * margin {
        return m;
    }
    for row in margin..gt.height - margin {
        for col in margin..gt.width - margin {
            let i = row * gt.width + col;
            if !gt.is_valid(i) {
                continue;
            }
            let tx = col as f32 + gt.u[i];
            let ty = row as f32 + gt.v[i];
            let far = margin as f32;
            if tx >= far
                && ty >= far
                && tx <= (gt.width - 1 - margin) as f32
                && ty <= (gt.height - 1 - margin) as f32
            {
                m.set(i, true);
            }
        }
    }
    m
}
