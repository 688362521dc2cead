//! Criterion benchmarks for the updaters live under `benches/`.
