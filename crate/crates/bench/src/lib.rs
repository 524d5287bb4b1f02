//! Benchmarks for balquant live in `benches/`.
