//! Memory-efficient optical flow through hybrid cost volumes.
//!
//! The engine builds two top-k sparsified 3D global cost volumes (horizontal
//! and vertical) at 1/16 resolution, aggregates them with a separable 3D
//! convolution stack, regresses an initial flow by soft-argmax, supplements
//! it with a 4D local cost volume at 1/8 resolution, and refines iteratively
//! with recentered local lookups. An element-count memory model and an
//! instrumented peak meter verify that the sparsified volumes stay far below
//! the dense all-pairs footprint.
//!
//! Entry points: [`estimate`] for the whole pipeline, the `hcv` binary in
//! the companion CLI crate for file-based use.

pub mod config;
pub mod error;
pub mod eval;
pub mod features;
pub mod flow;
pub mod flowio;
pub mod global_cost;
pub mod local_cost;
pub mod memory;
pub mod numerics;
pub mod oracle;
pub mod pipeline;
pub mod refine;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod weights;

pub use config::{LocalMode, RunConfig, DEFAULT_TEMPERATURE};
pub use error::{Error, Result};
pub use eval::{epe, f1_all, loss_init, loss_iter, loss_total, MetricReport};
pub use features::{build_pyramid, extract_features, FeatureMap, Image, DESCRIPTOR_CHANNELS};
pub use flow::FlowField;
pub use flowio::{flow_to_color, read_flo, read_image, write_flo, write_image};
pub use global_cost::{
    build_topk_volume, correlation, initial_flow, AggregatedCostVolume, Axis, TopkCostVolume,
};
pub use local_cost::{build_local_volume, lookup_local_at_flow, LocalCostVolume};
pub use memory::{
    count_allpairs, count_hcv, measure_peak, MemoryPlan, Scenario, ScenarioMethod, TrackedAlloc,
};
pub use numerics::{
    avg_pool2d, bilinear_sample, conv3d, conv_transpose3d, masked_softmax, topk, ScoredIndexList,
    SENTINEL,
};
pub use pipeline::{estimate, EstimateOutput, StageTimings};
pub use refine::{
    lookup_global, refine_flow, seed_from_init, upsample_flow, GlobalLookupFeatures,
};
pub use synth::make_synthetic_pair;
pub use tensor::{BitMask, Tensor};
pub use weights::{aggregate, aggregate_default, AggWeights, Activation, AggLayer, LayerKind};
