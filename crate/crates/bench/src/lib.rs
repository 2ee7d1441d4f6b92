//! Criterion benchmarks for the hot paths: physics stepping, network
//! forward/backward passes, advantage estimation, and rollout collection.
//! Run with `cargo bench -p tandem-bench`.
