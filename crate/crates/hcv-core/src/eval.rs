//! Flow metrics and training-style losses.
//!
//! Reductions run in f64 with a fixed order; outputs are deterministic for a
//! given mask regardless of thread count (metrics are single-pass here).

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::tensor::BitMask;

/// Magnitude boundary between the s0-40 and s40+ ground-truth bands.
const BAND_SPLIT: f64 = 40.0;

/// Outlier rule: error above 3 px and above 5% of the ground-truth magnitude.
const OUTLIER_ABS: f64 = 3.0;
const OUTLIER_REL: f64 = 0.05;

/// Flow accuracy summary.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub epe_mean: f64,
    pub epe_median: f64,
    /// Percentage of masked pixels violating the outlier rule.
    pub f1_all: f64,
    pub pixel_count: usize,
    /// Mean EPE over pixels with |gt| <= 40 px; NaN when the band is empty.
    pub epe_s0_40: f64,
    pub count_s0_40: usize,
    /// Mean EPE over pixels with |gt| > 40 px; NaN when the band is empty.
    pub epe_s40_plus: f64,
    pub count_s40_plus: usize,
}

impl MetricReport {
    /// Flat `key=value` text block used by the CLI.
    pub fn to_kv_block(&self) -> String {
        let fmt = |v: f64| {
            if v.is_nan() {
                "nan".to_string()
            } else {
                format!("{v:.6}")
            }
        };
        format!(
            "epe_mean={}\nepe_median={}\nf1_all={}\npixel_count={}\nepe_s0_40={}\ncount_s0_40={}\nepe_s40_plus={}\ncount_s40_plus={}\n",
            fmt(self.epe_mean),
            fmt(self.epe_median),
            fmt(self.f1_all),
            self.pixel_count,
            fmt(self.epe_s0_40),
            self.count_s0_40,
            fmt(self.epe_s40_plus),
            self.count_s40_plus
        )
    }
}

fn check_same_grid(pred: &FlowField, gt: &FlowField) -> Result<()> {
    if pred.height != gt.height || pred.width != gt.width || pred.level != gt.level {
        return Err(Error::invalid(format!(
            "metric inputs disagree: pred {}x{} level {} vs gt {}x{} level {}",
            pred.height, pred.width, pred.level, gt.height, gt.width, gt.level
        )));
    }
    Ok(())
}

/// Effective evaluation mask: explicit mask (if any) intersected with both
/// fields' validity masks.
fn masked_pixels(pred: &FlowField, gt: &FlowField, mask: Option<&BitMask>) -> Vec<usize> {
    (0..gt.u.len())
        .filter(|&i| {
            gt.is_valid(i)
                && pred.is_valid(i)
                && mask.map(|m| m.get(i)).unwrap_or(true)
        })
        .collect()
}

/// Per-pixel end-point error with mean, median, the outlier percentage and
/// the magnitude-band breakdown.
pub fn epe(pred: &FlowField, gt: &FlowField, mask: Option<&BitMask>) -> Result<MetricReport> {
    check_same_grid(pred, gt)?;
    let pixels = masked_pixels(pred, gt, mask);
    if pixels.is_empty() {
        return Err(Error::invalid("epe: empty evaluation mask".to_string()));
    }
    let mut errors = Vec::with_capacity(pixels.len());
    let mut sum = 0.0f64;
    let mut outliers = 0usize;
    let mut band_sum = [0.0f64; 2];
    let mut band_count = [0usize; 2];
    for &i in &pixels {
        let du = pred.u[i] as f64 - gt.u[i] as f64;
        let dv = pred.v[i] as f64 - gt.v[i] as f64;
        let e = (du * du + dv * dv).sqrt();
        let mag = (gt.u[i] as f64).hypot(gt.v[i] as f64);
        errors.push(e);
        sum += e;
        if e > OUTLIER_ABS && e > OUTLIER_REL * mag {
            outliers += 1;
        }
        let band = usize::from(mag > BAND_SPLIT);
        band_sum[band] += e;
        band_count[band] += 1;
    }
    errors.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = errors.len();
    let median = if n % 2 == 1 {
        errors[n / 2]
    } else {
        0.5 * (errors[n / 2 - 1] + errors[n / 2])
    };
    let band_mean = |b: usize| {
        if band_count[b] == 0 {
            f64::NAN
        } else {
            band_sum[b] / band_count[b] as f64
        }
    };
    Ok(MetricReport {
        epe_mean: sum / n as f64,
        epe_median: median,
        f1_all: 100.0 * outliers as f64 / n as f64,
        pixel_count: n,
        epe_s0_40: band_mean(0),
        count_s0_40: band_count[0],
        epe_s40_plus: band_mean(1),
        count_s40_plus: band_count[1],
    })
}

/// Percentage of masked pixels whose error exceeds both 3 px and 5% of the
/// ground-truth magnitude.
pub fn f1_all(pred: &FlowField, gt: &FlowField, mask: Option<&BitMask>) -> Result<f64> {
    Ok(epe(pred, gt, mask)?.f1_all)
}

/// Mean L1 loss over both components of the masked pixels.
pub fn loss_init(pred: &FlowField, gt: &FlowField, mask: Option<&BitMask>) -> Result<f64> {
    check_same_grid(pred, gt)?;
    let pixels = masked_pixels(pred, gt, mask);
    if pixels.is_empty() {
        return Err(Error::invalid("loss_init: empty evaluation mask".to_string()));
    }
    let mut sum = 0.0f64;
    for &i in &pixels {
        sum += (pred.u[i] as f64 - gt.u[i] as f64).abs()
            + (pred.v[i] as f64 - gt.v[i] as f64).abs();
    }
    Ok(sum / pixels.len() as f64)
}

/// Exponentially weighted sum of per-iterate L1 losses: the last prediction
/// has weight 1, the first `gamma^(N-1)`.
pub fn loss_iter(
    seq: &[FlowField],
    gt: &FlowField,
    gamma: f64,
    mask: Option<&BitMask>,
) -> Result<f64> {
    if seq.is_empty() {
        return Err(Error::invalid("loss_iter: empty prediction sequence".to_string()));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::invalid(format!(
            "loss_iter: gamma must lie in (0, 1], got {gamma}"
        )));
    }
    let weights = iter_weights(seq.len(), gamma);
    let mut total = 0.0f64;
    for (f, w) in seq.iter().zip(weights) {
        total += w * loss_init(f, gt, mask)?;
    }
    Ok(total)
}

/// Weights gamma^(N-1) .. gamma^0 by repeated multiplication.
pub fn iter_weights(n: usize, gamma: f64) -> Vec<f64> {
    let mut w = vec![1.0f64; n];
    for i in (0..n.saturating_sub(1)).rev() {
        w[i] = w[i + 1] * gamma;
    }
    w
}

/// Total loss: initial-flow term plus the weighted iterate term.
pub fn loss_total(l_init: f64, l_iter: f64) -> f64 {
    l_init + l_iter
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_pixel_pair(pu: f32, pv: f32, gu: f32, gv: f32) -> (FlowField, FlowField) {
        // metrics accept any grid; a 1x2 grid with the second pixel masked
        // keeps the mask plumbing honest
        let pred = FlowField::from_components(1, 2, 1, vec![pu, 0.0], vec![pv, 0.0]).unwrap();
        let mut gt = FlowField::from_components(1, 2, 1, vec![gu, 0.0], vec![gv, 0.0]).unwrap();
        let mut m = BitMask::new_false(2);
        m.set(0, true);
        gt.valid = Some(m);
        (pred, gt)
    }

    #[test]
    fn epe_three_four_five() {
        let (pred, gt) = single_pixel_pair(3.0, 4.0, 0.0, 0.0);
        let r = epe(&pred, &gt, None).unwrap();
        assert_eq!(r.epe_mean, 5.0);
        assert_eq!(r.epe_median, 5.0);
        assert_eq!(r.pixel_count, 1);
    }

    #[test]
    fn epe_zero_when_equal() {
        let (gt0, gt1) = single_pixel_pair(2.0, -7.0, 2.0, -7.0);
        let r = epe(&gt0, &gt1, None).unwrap();
        assert_eq!(r.epe_mean, 0.0);
        assert_eq!(r.f1_all, 0.0);
    }

    #[test]
    fn epe_matches_loop_oracle() {
        let mut rng = crate::rng::SplitMix64::new(7);
        let n = 16usize;
        let pu: Vec<f32> = (0..n).map(|_| rng.range_f32(-50.0, 50.0)).collect();
        let pv: Vec<f32> = (0..n).map(|_| rng.range_f32(-50.0, 50.0)).collect();
        let gu: Vec<f32> = (0..n).map(|_| rng.range_f32(-50.0, 50.0)).collect();
        let gv: Vec<f32> = (0..n).map(|_| rng.range_f32(-50.0, 50.0)).collect();
        let pred = FlowField::from_components(4, 4, 1, pu.clone(), pv.clone()).unwrap();
        let gt = FlowField::from_components(4, 4, 1, gu.clone(), gv.clone()).unwrap();
        let r = epe(&pred, &gt, None).unwrap();
        let mut sum = 0.0f64;
        for i in 0..n {
            let du = pu[i] as f64 - gu[i] as f64;
            let dv = pv[i] as f64 - gv[i] as f64;
            sum += (du * du + dv * dv).sqrt();
        }
        assert!((r.epe_mean - sum / n as f64).abs() < 1e-6);
    }

    #[test]
    fn f1_rule_absolute_and_relative() {
        // 5 px error at |gt| = 10: outlier
        let (pred, gt) = single_pixel_pair(15.0, 0.0, 10.0, 0.0);
        assert_eq!(f1_all(&pred, &gt, None).unwrap(), 100.0);
        // 4 px error at |gt| = 100: rescued by the relative term
        let (pred, gt) = single_pixel_pair(104.0, 0.0, 100.0, 0.0);
        assert_eq!(f1_all(&pred, &gt, None).unwrap(), 0.0);
    }

    #[test]
    fn f1_mixed_field_matches_loop() {
        let mut rng = crate::rng::SplitMix64::new(8);
        let n = 10usize;
        let gu: Vec<f32> = (0..n).map(|_| rng.range_f32(-80.0, 80.0)).collect();
        let gv = vec![0.0f32; n];
        let mut pu = gu.clone();
        for (i, v) in pu.iter_mut().enumerate() {
            *v += (i as f32) - 4.5; // errors from -4.5 to 4.5
        }
        let pred = FlowField::from_components(2, 5, 1, pu.clone(), gv.clone()).unwrap();
        let gt = FlowField::from_components(2, 5, 1, gu.clone(), gv.clone()).unwrap();
        let got = f1_all(&pred, &gt, None).unwrap();
        let mut outliers = 0;
        for i in 0..n {
            let e = (pu[i] - gu[i]).abs() as f64;
            if e > 3.0 && e > 0.05 * gu[i].abs() as f64 {
                outliers += 1;
            }
        }
        assert_eq!(got, 100.0 * outliers as f64 / n as f64);
    }

    #[test]
    fn f1_is_permutation_invariant() {
        let pu = vec![5.0f32, 0.1, 9.0, 0.0];
        let gu = vec![0.0f32, 0.0, 4.0, 0.0];
        let pred = FlowField::from_components(2, 2, 1, pu.clone(), vec![0.0; 4]).unwrap();
        let gt = FlowField::from_components(2, 2, 1, gu.clone(), vec![0.0; 4]).unwrap();
        let a = f1_all(&pred, &gt, None).unwrap();
        let perm = [2usize, 0, 3, 1];
        let pred2 = FlowField::from_components(
            2,
            2,
            1,
            perm.iter().map(|&i| pu[i]).collect(),
            vec![0.0; 4],
        )
        .unwrap();
        let gt2 = FlowField::from_components(
            2,
            2,
            1,
            perm.iter().map(|&i| gu[i]).collect(),
            vec![0.0; 4],
        )
        .unwrap();
        assert_eq!(a, f1_all(&pred2, &gt2, None).unwrap());
    }

    #[test]
    fn loss_init_worked_example() {
        let (pred, gt) = single_pixel_pair(1.0, -1.0, 0.0, 0.0);
        assert_eq!(loss_init(&pred, &gt, None).unwrap(), 2.0);
        assert_eq!(loss_init(&gt, &gt, None).unwrap(), 0.0);
    }

    #[test]
    fn loss_iter_worked_example() {
        // per-frame L1 losses [1, 2] at gamma 0.8 weight to 0.8*1 + 1*2
        let gt = FlowField::zeros(1, 1, 1);
        let f1 = FlowField::constant(1, 1, 1, 1.0, 0.0); // L1 = 1
        let f2 = FlowField::constant(1, 1, 1, 2.0, 0.0); // L1 = 2
        let total = loss_iter(&[f1, f2], &gt, 0.8, None).unwrap();
        assert_eq!(total, 2.8);
    }

    #[test]
    fn loss_iter_single_frame_weight_is_one() {
        let gt = FlowField::zeros(1, 1, 1);
        let f = FlowField::constant(1, 1, 1, 3.0, 0.0);
        assert_eq!(loss_iter(&[f], &gt, 0.8, None).unwrap(), 3.0);
    }

    #[test]
    fn iter_weights_match_repeated_multiplication() {
        let w = iter_weights(12, 0.8);
        assert!((w[0] - 0.08589934592).abs() < 1e-9);
        assert_eq!(w[11], 1.0);
        let mut acc = 1.0f64;
        for i in (0..12).rev() {
            assert!((w[i] - acc).abs() < 1e-12);
            acc *= 0.8;
        }
    }

    #[test]
    fn loss_iter_is_monotone_in_frame_losses() {
        let gt = FlowField::zeros(1, 1, 1);
        let seq1 = vec![
            FlowField::constant(1, 1, 1, 1.0, 0.0),
            FlowField::constant(1, 1, 1, 1.0, 0.0),
        ];
        let seq2 = vec![
            FlowField::constant(1, 1, 1, 1.5, 0.0),
            FlowField::constant(1, 1, 1, 1.0, 0.0),
        ];
        assert!(
            loss_iter(&seq2, &gt, 0.8, None).unwrap() > loss_iter(&seq1, &gt, 0.8, None).unwrap()
        );
    }

    #[test]
    fn loss_total_adds() {
        assert_eq!(loss_total(0.0, 0.0), 0.0);
        assert_eq!(loss_total(1.5, 2.8), 4.3);
    }

    #[test]
    fn empty_mask_rejected() {
        let pred = FlowField::zeros(2, 2, 1);
        let mut gt = FlowField::zeros(2, 2, 1);
        gt.valid = Some(BitMask::new_false(4));
        assert!(epe(&pred, &gt, None).is_err());
        assert!(loss_init(&pred, &gt, None).is_err());
    }
}
