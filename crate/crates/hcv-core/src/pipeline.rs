//! End-to-end flow estimation: features, global volumes, initial flow,
//! iterative refinement, upsampling.

use std::time::Instant;

use crate::config::{LocalMode, RunConfig};
use crate::error::{Error, Result};
use crate::features::{build_pyramid, Image};
use crate::flow::FlowField;
use crate::global_cost::{build_topk_volume, initial_flow, Axis};
use crate::local_cost::build_local_volume;
use crate::memory::{count_hcv, MemoryPlan};
use crate::refine::{refine_flow, seed_from_init, upsample_flow};
use crate::weights::{aggregate, aggregate_default, AggWeights};

/// Wall-clock milliseconds per pipeline stage.
#[derive(Debug, Clone, Default)]
pub struct StageTimings {
    pub features_ms: f64,
    pub global_ms: f64,
    pub aggregate_ms: f64,
    pub init_ms: f64,
    pub refine_ms: f64,
    pub upsample_ms: f64,
    pub total_ms: f64,
}

impl StageTimings {
    pub fn render(&self) -> String {
        format!(
            "stage_ms.features={:.2}\nstage_ms.global={:.2}\nstage_ms.aggregate={:.2}\nstage_ms.init={:.2}\nstage_ms.refine={:.2}\nstage_ms.upsample={:.2}\nstage_ms.total={:.2}\n",
            self.features_ms,
            self.global_ms,
            self.aggregate_ms,
            self.init_ms,
            self.refine_ms,
            self.upsample_ms,
            self.total_ms
        )
    }
}

/// Full-pipeline result.
#[derive(Debug)]
pub struct EstimateOutput {
    /// Final flow at full resolution.
    pub flow: FlowField,
    /// Initial flow at 1/16 resolution.
    pub f_init: FlowField,
    /// Refined flow at 1/8 resolution (last iterate).
    pub flow_level8: FlowField,
    pub iterations: usize,
    pub timings: StageTimings,
    pub plan: MemoryPlan,
}

fn ms(from: Instant) -> f64 {
    from.elapsed().as_secs_f64() * 1e3
}

/// Runs the two-level pipeline on an image pair.
pub fn estimate(
    img1: &Image,
    img2: &Image,
    cfg: &RunConfig,
    weights: Option<&AggWeights>,
) -> Result<EstimateOutput> {
    cfg.validate()?;
    if img1.width() != img2.width() || img1.height() != img2.height() {
        return Err(Error::invalid(format!(
            "estimate: frame sizes differ: {}x{} vs {}x{}",
            img1.width(),
            img1.height(),
            img2.width(),
            img2.height()
        )));
    }
    let start = Instant::now();
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let (f1_8, f1_16) = build_pyramid(img1)?;
    let (f2_8, f2_16) = build_pyramid(img2)?;
    timings.features_ms = ms(t);

    let (d_h, d_v) = cfg.derived_d(f1_16.height, f1_16.width);
    let k = cfg.effective_k(f1_16.height, f1_16.width);

    let t = Instant::now();
    let topk_h = build_topk_volume(&f1_16, &f2_16, Axis::Horizontal, d_h, k)?;
    let topk_v = build_topk_volume(&f1_16, &f2_16, Axis::Vertical, d_v, k)?;
    timings.global_ms = ms(t);

    let t = Instant::now();
    let (agg_h, agg_v) = match weights {
        Some(w) => (aggregate(&topk_h, w)?, aggregate(&topk_v, w)?),
        None => (aggregate_default(&topk_h), aggregate_default(&topk_v)),
    };
    drop(topk_h);
    drop(topk_v);
    timings.aggregate_ms = ms(t);

    let t = Instant::now();
    let f_init = initial_flow(&agg_h, &agg_v, cfg.temperature)?;
    timings.init_ms = ms(t);

    let t = Instant::now();
    let seed = seed_from_init(&f_init, f1_8.height, f1_8.width);
    let sequence = match cfg.local_mode {
        LocalMode::Recentered => refine_flow(
            &f1_8,
            &f2_8,
            &seed,
            cfg.iters,
            cfg.l_r,
            cfg.temperature,
            cfg.damping,
        )?,
        LocalMode::Precomputed => refine_flow_precomputed(
            &f1_8,
            &f2_8,
            &seed,
            cfg.iters,
            cfg.l_r,
            cfg.temperature,
            cfg.damping,
        )?,
    };
    let flow_level8 = sequence.last().expect("iters >= 1").clone();
    let iterations = sequence.len();
    timings.refine_ms = ms(t);

    let t = Instant::now();
    let flow = upsample_flow(&flow_level8, img1.height(), img1.width());
    timings.upsample_ms = ms(t);
    timings.total_ms = ms(start);

    Ok(EstimateOutput {
        flow,
        f_init,
        flow_level8,
        iterations,
        timings,
        plan: count_hcv(img1.height(), img1.width(), cfg),
    })
}

/// Refinement variant that indexes the precomputed zero-centered local
/// volume instead of recomputing correlations: the window is read at the
/// rounded current flow plus each offset, zero beyond the radius. Shares
/// the masked-expectation update and temperature schedule with
/// [`refine_flow`].
pub fn refine_flow_precomputed(
    f1: &crate::features::FeatureMap,
    f2: &crate::features::FeatureMap,
    f_seed: &FlowField,
    iters: usize,
    l_r: usize,
    temperature: f32,
    damping: f32,
) -> Result<Vec<FlowField>> {
    if iters < 1 {
        return Err(Error::invalid("refine: iters must be >= 1".to_string()));
    }
    let volume = build_local_volume(f1, f2, l_r)?;
    let (h, w) = (f1.height, f1.width);
    let side = 2 * l_r + 1;
    let wl = side * side;
    let mut mask = vec![false; wl];
    let mut sequence = Vec::with_capacity(iters);
    let mut current = f_seed.clone();
    current.level = 8;
    for step in 0..iters {
        let step_temperature = crate::refine::step_temperature(step, iters, temperature);
        let mut next = current.clone();
        for row in 0..h {
            for col in 0..w {
                let p = row * w + col;
                let (cu, cv) = (current.u[p].round() as i64, current.v[p].round() as i64);
                let mut scores = vec![0.0f32; wl];
                for (o, s) in scores.iter_mut().enumerate() {
                    let dy = (o / side) as i64 - l_r as i64 + cv;
                    let dx = (o % side) as i64 - l_r as i64 + cu;
                    if dy.unsigned_abs() as usize <= l_r && dx.unsigned_abs() as usize <= l_r {
                        *s = volume.at_offset(row, col, dy, dx);
                    }
                }
                let (du, dv) = crate::refine::window_expected_offset(
                    &scores,
                    &mut mask,
                    side,
                    step_temperature,
                );
                next.u[p] = current.u[p] + damping * du;
                next.v[p] = current.v[p] + damping * dv;
            }
        }
        current = next;
        sequence.push(current.clone());
    }
    Ok(sequence)
}
