use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::sim::{TaskKind, TrialResult};

fn check(results: &[TrialResult], n: usize) -> Result<()> {
    if results.is_empty() {
        return Err(Error::Data("no trials to score".into()));
    }
    if let Some(r) = results.iter().find(|r| r.n != n) {
        return Err(Error::Mismatch(format!("trial has n = {}, expected {n}", r.n)));
    }
    Ok(())
}

/// Fraction of trials that completed all `n` steps.
pub fn success_rate(results: &[TrialResult], n: usize) -> Result<f64> {
    check(results, n)?;
    let full = results.iter().filter(|r| r.completed == n).count();
    Ok(full as f64 / results.len() as f64)
}

/// Mean fraction of completed steps.
pub fn completion_rate(results: &[TrialResult], n: usize) -> Result<f64> {
    check(results, n)?;
    let steps: usize = results.iter().map(|r| r.completed).sum();
    Ok(steps as f64 / (n * results.len()) as f64)
}

/// Scores of one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskMetrics {
    pub task: TaskKind,
    /// Steps per trial.
    pub n: usize,
    pub sr: f64,
    pub cr: f64,
    /// Completed steps of every trial, seed-major.
    pub completed: Vec<usize>,
}

impl TaskMetrics {
    pub fn from_results(task: TaskKind, n: usize, results: &[TrialResult]) -> Result<TaskMetrics> {
        Ok(TaskMetrics {
            task,
            n,
            sr: success_rate(results, n)?,
            cr: completion_rate(results, n)?,
            completed: results.iter().map(|r| r.completed).collect(),
        })
    }

    pub fn trials(&self) -> usize {
        self.completed.len()
    }
}

/// Benchmark results for one model.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub model: String,
    pub config_hash: String,
    /// Trials per task and seed.
    pub trials: usize,
    pub seeds: Vec<u64>,
    pub tasks: Vec<TaskMetrics>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    model: String,
    config_hash: String,
    task: String,
    n: usize,
    trials: usize,
    seeds: String,
    sr: f64,
    cr: f64,
    completed: String,
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

fn split<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split_whitespace()
        .map(|x| x.parse().map_err(|_| Error::Format(format!("bad {what} entry {x:?}"))))
        .collect()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("metrics csv: {e}"))
}

impl MetricsReport {
    pub fn task(&self, kind: TaskKind) -> Option<&TaskMetrics> {
        self.tasks.iter().find(|t| t.task == kind)
    }

    /// Writes several reports as one CSV table, one row per model and task.
    pub fn write_csv(reports: &[MetricsReport], out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in reports {
            for t in &r.tasks {
                w.serialize(Row {
                    model: r.model.clone(),
                    config_hash: r.config_hash.clone(),
                    task: t.task.name().to_string(),
                    n: t.n,
                    trials: r.trials,
                    seeds: join(&r.seeds),
                    sr: t.sr,
                    cr: t.cr,
                    completed: join(&t.completed),
                })
                .map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Inverse of [`MetricsReport::write_csv`]. Consecutive rows of the same
    /// model and hash form one report.
    pub fn read_csv(input: impl Read) -> Result<Vec<MetricsReport>> {
        let mut rd = csv::Reader::from_reader(input);
        let mut out: Vec<MetricsReport> = Vec::new();
        for row in rd.deserialize::<Row>() {
            let row = row.map_err(csv_err)?;
            let seeds: Vec<u64> = split(&row.seeds, "seed")?;
            let metrics = TaskMetrics {
                task: row.task.parse()?,
                n: row.n,
                sr: row.sr,
                cr: row.cr,
                completed: split(&row.completed, "completed")?,
            };
            match out.last_mut() {
                Some(r) if r.model == row.model && r.config_hash == row.config_hash => {
                    if r.seeds != seeds || r.trials != row.trials {
                        return Err(Error::Format(format!("inconsistent rows for model {}", row.model)));
                    }
                    r.tasks.push(metrics);
                }
                _ => out.push(MetricsReport {
                    model: row.model,
                    config_hash: row.config_hash,
                    trials: row.trials,
                    seeds,
                    tasks: vec![metrics],
                }),
            }
        }
        Ok(out)
    }
}

/// Hex SHA-256 of a configuration's text form.
pub fn config_hash(config: &KvMap) -> String {
    let digest = Sha256::digest(config.to_text().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trials(s: &[usize], n: usize) -> Vec<TrialResult> {
        s.iter().map(|&c| TrialResult::new(c, n).unwrap()).collect()
    }

    #[test]
    fn nine_full_one_partial() {
        let r = trials(&[5, 5, 5, 5, 5, 5, 5, 5, 5, 4], 5);
        assert_eq!(success_rate(&r, 5).unwrap(), 0.9);
        assert_eq!(completion_rate(&r, 5).unwrap(), 0.98);
    }

    #[test]
    fn mismatched_and_empty_are_errors() {
        let mut r = trials(&[5, 5], 5);
        r.push(TrialResult::new(3, 4).unwrap());
        assert!(success_rate(&r, 5).is_err());
        assert!(completion_rate(&[], 5).is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let rep = MetricsReport {
            model: "full".into(),
            config_hash: "ab12".into(),
            trials: 2,
            seeds: vec![1, 2],
            tasks: vec![
                TaskMetrics::from_results(TaskKind::Loop, 4, &trials(&[4, 3, 4, 0], 4)).unwrap(),
                TaskMetrics::from_results(TaskKind::Blindspot, 5, &trials(&[5, 5, 1, 2], 5)).unwrap(),
            ],
        };
        let other = MetricsReport {
            model: "no-mem".into(),
            ..rep.clone()
        };
        let mut buf = Vec::new();
        MetricsReport::write_csv(&[rep.clone(), other.clone()], &mut buf).unwrap();
        assert_eq!(MetricsReport::read_csv(buf.as_slice()).unwrap(), vec![rep, other]);
    }
}
