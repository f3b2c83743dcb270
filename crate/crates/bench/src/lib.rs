//! Criterion benchmarks for the fusion kernels and the encoder; see `benches/`.
