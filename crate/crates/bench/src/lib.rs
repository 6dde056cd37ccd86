//! Criterion benchmarks for binning, metrics, the transformer forward pass
//! and one training step. Run with `cargo bench -p rvtc-bench`.
