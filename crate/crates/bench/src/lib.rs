//! Criterion benchmarks for the fusion kernels, special functions and a
//! single training step. Run with `cargo bench -p apln-bench`.
