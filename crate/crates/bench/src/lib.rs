//! Benchmarks for posecraft live in `benches/`.
