//! Criterion benchmarks for the sevade engine; see `benches/`.
