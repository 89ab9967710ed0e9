//! Criterion benchmarks for the cvqkd hot paths; run with `cargo bench -p cvqkd-bench`.
