//! Criterion benchmarks for probegrid; see `benches/`.
