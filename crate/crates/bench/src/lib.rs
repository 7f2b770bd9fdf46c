//! Criterion benchmarks for geograph kernels; see `benches/`.
