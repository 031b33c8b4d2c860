//! Element-count memory model for the cost volumes and the instrumented
//! peak accounting that verifies it.
//!
//! Counts are exact integer arithmetic. Scores and indices are 32-bit items;
//! validity masks are one bit per slot rounded up to bytes.

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::features::build_pyramid;
use crate::global_cost::{build_topk_volume, Axis, PixelMajor};
use crate::local_cost::build_local_volume;
use crate::synth::make_synthetic_pair;
use crate::weights::aggregate_default;

/// One accounted buffer of a memory plan.
#[derive(Debug, Clone)]
pub struct BufferSpec {
    pub name: String,
    /// 32-bit items for score/index buffers; bit count for masks.
    pub elements: u64,
    pub bytes: u64,
}

/// Closed-form memory footprint of one cost-volume method.
#[derive(Debug, Clone)]
pub struct MemoryPlan {
    pub method: &'static str,
    pub buffers: Vec<BufferSpec>,
    /// All 32-bit items: correlation scores plus retained indices.
    pub total_elements: u64,
    /// Correlation score entries only; the apples-to-apples count against
    /// the dense all-pairs volume, which stores no indices.
    pub score_elements: u64,
    pub total_bytes: u64,
}

impl MemoryPlan {
    fn from_parts(method: &'static str, buffers: Vec<BufferSpec>, score_elements: u64) -> Self {
        let total_elements = buffers
            .iter()
            .filter(|b| !b.name.ends_with("valid"))
            .map(|b| b.elements)
            .sum();
        let total_bytes = buffers.iter().map(|b| b.bytes).sum();
        MemoryPlan {
            method,
            buffers,
            total_elements,
            score_elements,
            total_bytes,
        }
    }

    pub fn render(&self) -> String {
        let mut out = format!("method={}\n", self.method);
        for b in &self.buffers {
            out.push_str(&format!(
                "buffer.{}: elements={} bytes={}\n",
                b.name, b.elements, b.bytes
            ));
        }
        out.push_str(&format!(
            "total_elements={}\nscore_elements={}\ntotal_bytes={}\n",
            self.total_elements, self.score_elements, self.total_bytes
        ));
        out
    }
}

fn ceil_div(a: usize, b: usize) -> u64 {
    a.div_ceil(b) as u64
}

fn mask_bytes(bits: u64) -> u64 {
    bits.div_ceil(8)
}

/// Dense all-pairs cost volume count at 1/8 resolution with an optional
/// correlation pyramid: level i holds base / 4^i entries.
pub fn count_allpairs(height: usize, width: usize, levels: usize) -> MemoryPlan {
    let levels = levels.max(1);
    let base = ceil_div(height, 8) * ceil_div(width, 8);
    let base = base * base;
    let mut buffers = Vec::new();
    let mut score_elements = 0u64;
    for i in 0..levels {
        let elements = base / 4u64.pow(i as u32);
        score_elements += elements;
        buffers.push(BufferSpec {
            name: format!("allpairs.level{i}"),
            elements,
            bytes: 4 * elements,
        });
    }
    MemoryPlan::from_parts("allpairs", buffers, score_elements)
}

/// Hybrid cost volume count: top-k scores and indices plus masks on both
/// axes at 1/16, the aggregated volumes, and the local volume at 1/8.
pub fn count_hcv(height: usize, width: usize, cfg: &RunConfig) -> MemoryPlan {
    let h16 = ceil_div(height, 16);
    let w16 = ceil_div(width, 16);
    let h8 = ceil_div(height, 8);
    let w8 = ceil_div(width, 8);
    let (d_h, d_v) = cfg.derived_d(h16 as usize, w16 as usize);
    let k = cfg.effective_k(h16 as usize, w16 as usize) as u64;
    let cells = h16 * w16;
    let mut buffers = Vec::new();
    let mut score_elements = 0u64;

    for (axis, d) in [("h", d_h as u64), ("v", d_v as u64)] {
        let slots = cells * 2 * d;
        score_elements += slots * k;
        buffers.push(BufferSpec {
            name: format!("topk_{axis}.scores"),
            elements: slots * k,
            bytes: 4 * slots * k,
        });
        buffers.push(BufferSpec {
            name: format!("topk_{axis}.indices"),
            elements: slots * k,
            bytes: 4 * slots * k,
        });
        buffers.push(BufferSpec {
            name: format!("topk_{axis}.valid"),
            elements: slots,
            bytes: mask_bytes(slots),
        });
    }
    for (axis, d) in [("h", d_h as u64), ("v", d_v as u64)] {
        let slots = cells * 2 * d;
        score_elements += slots;
        buffers.push(BufferSpec {
            name: format!("agg_{axis}.scores"),
            elements: slots,
            bytes: 4 * slots,
        });
        buffers.push(BufferSpec {
            name: format!("agg_{axis}.valid"),
            elements: slots,
            bytes: mask_bytes(slots),
        });
    }
    let side = 2 * cfg.l_r as u64 + 1;
    let local = h8 * w8 * side * side;
    score_elements += local;
    buffers.push(BufferSpec {
        name: "local.scores".to_string(),
        elements: local,
        bytes: 4 * local,
    });
    MemoryPlan::from_parts("hcv", buffers, score_elements)
}

// ---------------------------------------------------------------------------
// live-byte accounting for volume buffers
//
// Thread-local so concurrently running scenarios (e.g. parallel tests) do
// not pollute each other's peaks; every buffer of one scenario is
// constructed and dropped on the scenario's own thread.

use std::cell::Cell;

thread_local! {
    static CURRENT_BYTES: Cell<u64> = const { Cell::new(0) };
    static PEAK_BYTES: Cell<u64> = const { Cell::new(0) };
}

/// RAII registration of one volume buffer with the live-byte meter.
#[derive(Debug)]
pub struct TrackedAlloc {
    bytes: u64,
}

impl TrackedAlloc {
    pub fn new(bytes: u64) -> Self {
        let cur = CURRENT_BYTES.with(|c| {
            c.set(c.get().saturating_add(bytes));
            c.get()
        });
        PEAK_BYTES.with(|p| p.set(p.get().max(cur)));
        TrackedAlloc { bytes }
    }
}

impl Clone for TrackedAlloc {
    fn clone(&self) -> Self {
        TrackedAlloc::new(self.bytes)
    }
}

impl Drop for TrackedAlloc {
    fn drop(&mut self) {
        CURRENT_BYTES.with(|c| c.set(c.get().saturating_sub(self.bytes)));
    }
}

pub fn meter_reset() {
    CURRENT_BYTES.with(|c| c.set(0));
    PEAK_BYTES.with(|p| p.set(0));
}

pub fn meter_peak() -> u64 {
    PEAK_BYTES.with(|p| p.get())
}

/// Memory scenario: build one method's volumes for a synthetic pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioMethod {
    Hcv,
    Allpairs,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub method: ScenarioMethod,
    pub width: usize,
    pub height: usize,
    /// Refuse to run the scenario if the closed-form plan exceeds this.
    pub cap_bytes: Option<u64>,
}

/// Runs a scenario under the volume-buffer meter and reports peak live
/// bytes. The all-pairs scenario reports budget-exceeded instead of
/// allocating past the cap.
pub fn measure_peak(scenario: &Scenario, cfg: &RunConfig) -> Result<u64> {
    let plan = match scenario.method {
        ScenarioMethod::Hcv => count_hcv(scenario.height, scenario.width, cfg),
        ScenarioMethod::Allpairs => count_allpairs(scenario.height, scenario.width, 1),
    };
    if let Some(cap) = scenario.cap_bytes {
        if plan.total_bytes > cap {
            return Err(Error::BudgetExceeded {
                required: plan.total_bytes,
                cap,
            });
        }
    }
    let (img1, img2, _) = make_synthetic_pair(scenario.width, scenario.height, 2, 1, 42)?;
    meter_reset();
    match scenario.method {
        ScenarioMethod::Hcv => {
            let (f1_8, f1_16) = build_pyramid(&img1)?;
            let (f2_8, f2_16) = build_pyramid(&img2)?;
            let (d_h, d_v) = cfg.derived_d(f1_16.height, f1_16.width);
            let k = cfg.effective_k(f1_16.height, f1_16.width);
            let th = build_topk_volume(&f1_16, &f2_16, Axis::Horizontal, d_h, k)?;
            let agg_h = aggregate_default(&th);
            let tv = build_topk_volume(&f1_16, &f2_16, Axis::Vertical, d_v, k)?;
            let agg_v = aggregate_default(&tv);
            let local = build_local_volume(&f1_8, &f2_8, cfg.l_r)?;
            // keep every volume live so the peak covers the full plan
            std::hint::black_box((&th, &tv, &agg_h, &agg_v, &local));
        }
        ScenarioMethod::Allpairs => {
            let (f1_8, _) = build_pyramid(&img1)?;
            let (f2_8, _) = build_pyramid(&img2)?;
            let cells = f1_8.height * f1_8.width;
            let _meter = TrackedAlloc::new(4 * cells as u64 * cells as u64);
            let p1 = PixelMajor::from_map(&f1_8);
            let p2 = PixelMajor::from_map(&f2_8);
            let mut dense = vec![0.0f32; cells * cells];
            for a in 0..cells {
                let d1 = p1.descriptor(a / f1_8.width, a % f1_8.width);
                for b in 0..cells {
                    let d2 = p2.descriptor(b / f2_8.width, b % f2_8.width);
                    let mut acc = 0.0f32;
                    for ch in 0..f1_8.channels {
                        acc += d1[ch] * d2[ch];
                    }
                    dense[a * cells + b] = acc / (f1_8.channels as f32).sqrt();
                }
            }
            std::hint::black_box(&dense);
        }
    }
    Ok(meter_peak())
}
