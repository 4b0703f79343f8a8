//! Criterion benchmarks for gpr-core; see benches/.
