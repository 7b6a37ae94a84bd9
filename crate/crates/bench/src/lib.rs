//! Criterion benchmarks for the retrieval pipeline live in `benches/`.
