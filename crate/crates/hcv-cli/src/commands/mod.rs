pub mod bench_mem;
pub mod estimate;
pub mod eval;
pub mod selfcheck;
pub mod synth;
