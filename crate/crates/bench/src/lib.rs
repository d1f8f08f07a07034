//! Criterion benchmarks for the tracking engine; see `benches/`.
