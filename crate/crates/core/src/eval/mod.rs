//! Benchmarking, metrics, feature export and gradient verification.

mod benchmark;
mod features;
mod gradcheck;
mod metrics;
mod policy;

pub use benchmark::{run_benchmark, run_suite, score, trial_seed, BenchmarkConfig, ModelInfo};
pub use features::{export_features, linear_probe, FeatureMatrix, ProbeConfig, ProbeResult};
pub use gradcheck::{check_param_groups, grad_check, GradCheckOptions, GradReport, GroupCheck};
pub use metrics::{completion_rate, config_hash, success_rate, MetricsReport, TaskMetrics};
pub use policy::NetPolicy;
