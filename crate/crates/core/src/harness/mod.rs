//! Configuration, seeded experiments, timing benchmarks and CSV output.

pub mod bench;
pub mod config;
pub mod experiment;
pub mod oracle;
pub mod output;

pub use bench::{bench_timing, log_log_slope, BenchRow};
pub use config::{parse_config, ExperimentConfig, H3Policy, KernelConfig, TargetConfig};
pub use experiment::{
    diagnose, mse_curve, run_experiment, run_replicates, summarize, sweep, MsePoint, ReplicateResult, ResultRow,
    SweepRow,
};
pub use oracle::{gaussian_oracle, OracleRow, OracleRun};
