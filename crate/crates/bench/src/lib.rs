//! Criterion benchmarks for the volumetric kernels live in `benches/`.
