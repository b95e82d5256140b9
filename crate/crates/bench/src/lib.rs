//! Criterion benchmarks for the core kernels live in `benches/`.
//! `cargo bench -p diffgame-bench` runs them.
