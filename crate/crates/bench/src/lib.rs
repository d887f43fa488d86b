//! Criterion benchmarks for the attack and training kernels live in `benches/`.
