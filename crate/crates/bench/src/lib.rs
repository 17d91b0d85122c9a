//! Criterion benchmarks for the `rtcnet` kernels and pipeline; see `benches/`.
