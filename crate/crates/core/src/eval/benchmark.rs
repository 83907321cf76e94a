use super::metrics::{MetricsReport, TaskMetrics};
use super::policy::NetPolicy;
use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::model::Network;
use crate::par::Execution;
use crate::sim::{derive_seed, run_task, Policy, TaskSpec, TrialResult};

/// Trial seed for trial `i` under base seed `seed`.
pub fn trial_seed(seed: u64, i: usize) -> u64 {
    derive_seed(seed, i as u64)
}

/// Runs `trials` trials per seed of every task in `suite` with a fresh policy
/// per job, in parallel.
pub fn run_suite<P: Policy>(
    suite: &[TaskSpec],
    trials: usize,
    seeds: &[u64],
    exec: Execution,
    make: impl Fn() -> P + Sync + Send,
) -> Result<Vec<Vec<TrialResult>>> {
    if suite.is_empty() || trials == 0 || seeds.is_empty() {
        return Err(Error::Config("benchmark needs at least one task, trial and seed".into()));
    }
    let jobs: Vec<(usize, u64)> = (0..suite.len())
        .flat_map(|t| seeds.iter().flat_map(move |&s| (0..trials).map(move |i| (t, trial_seed(s, i)))))
        .collect();
    let results = exec.map(&jobs, |&(t, seed)| run_task(&mut make(), &suite[t], seed));
    let mut per_task = vec![Vec::with_capacity(trials * seeds.len()); suite.len()];
    for (&(t, _), r) in jobs.iter().zip(results) {
        per_task[t].push(r?);
    }
    Ok(per_task)
}

/// Identity of the evaluated model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInfo {
    pub name: String,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkConfig {
    /// Trials per task and seed.
    pub trials: usize,
    pub seeds: Vec<u64>,
    /// Sample one dropout mask set per trial.
    pub mc_dropout: bool,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            trials: 10,
            seeds: vec![0],
            mc_dropout: true,
        }
    }
}

/// Benchmarks `net` on `suite` and scores every task.
pub fn run_benchmark(
    net: &Network,
    stats: &NormStats,
    info: &ModelInfo,
    suite: &[TaskSpec],
    cfg: &BenchmarkConfig,
    exec: Execution,
) -> Result<MetricsReport> {
    for spec in suite {
        if spec.render.size != net.config().input_size {
            return Err(Error::Mismatch(format!(
                "task {} renders {} px, the network takes {} px",
                spec.kind,
                spec.render.size,
                net.config().input_size
            )));
        }
    }
    let results = run_suite(suite, cfg.trials, &cfg.seeds, exec, || NetPolicy::new(net, stats, cfg.mc_dropout))?;
    score(info, suite, cfg.trials, &cfg.seeds, &results)
}

/// Builds a report from per-task trial results.
pub fn score(
    info: &ModelInfo,
    suite: &[TaskSpec],
    trials: usize,
    seeds: &[u64],
    results: &[Vec<TrialResult>],
) -> Result<MetricsReport> {
    let tasks = suite
        .iter()
        .zip(results)
        .map(|(spec, r)| TaskMetrics::from_results(spec.kind, spec.n, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport {
        model: info.name.clone(),
        config_hash: info.config_hash.clone(),
        trials,
        seeds: seeds.to_vec(),
        tasks,
    })
}
