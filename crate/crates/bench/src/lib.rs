//! Criterion benchmarks for `riverdp-core`; see `benches/`.
