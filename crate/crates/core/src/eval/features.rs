use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{normalize_with, subsample_stride, ColorJitter, Episode, NormStats};
use crate::error::{Error, Result};
use crate::model::{Mode, Network};
use crate::par::Execution;

/// Pooled backbone features, one row per evaluated step, with mode labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows × cols`.
    pub data: Vec<f64>,
    /// Mode index of every row.
    pub labels: Vec<usize>,
}

impl FeatureMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Text format: a `rows cols label_col` header where `cols` counts the
    /// label column, then one whitespace-separated row per line.
    pub fn write(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "{} {} {}", self.rows, self.cols + 1, self.cols)?;
        for i in 0..self.rows {
            let mut line = String::new();
            for v in self.row(i) {
                line.push_str(&v.to_string());
                line.push(' ');
            }
            line.push_str(&self.labels[i].to_string());
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn read(input: impl BufRead) -> Result<FeatureMatrix> {
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| Error::Truncated("feature file is empty".into()))??;
        let h: Vec<usize> = header
            .split_whitespace()
            .map(|x| x.parse().map_err(|_| Error::Format(format!("bad feature header {header:?}"))))
            .collect::<Result<_>>()?;
        let [rows, total, label_col] = h[..] else {
            return Err(Error::Format(format!("feature header needs three fields, got {header:?}")));
        };
        if total == 0 || label_col >= total {
            return Err(Error::Format(format!("label column {label_col} outside {total} columns")));
        }
        let cols = total - 1;
        let mut data = Vec::with_capacity(rows * cols);
        let mut labels = Vec::with_capacity(rows);
        for r in 0..rows {
            let line = lines
                .next()
                .ok_or_else(|| Error::Truncated(format!("feature file ends at row {r} of {rows}")))??;
            let vals: Vec<&str> = line.split_whitespace().collect();
            if vals.len() != total {
                return Err(Error::Parse {
                    line: r + 2,
                    msg: format!("{} fields, expected {total}", vals.len()),
                });
            }
            for (j, v) in vals.iter().enumerate() {
                let bad = || Error::Parse {
                    line: r + 2,
                    msg: format!("bad value {v:?}"),
                };
                if j == label_col {
                    labels.push(v.parse().map_err(|_| bad())?);
                } else {
                    data.push(v.parse().map_err(|_| bad())?);
                }
            }
        }
        Ok(FeatureMatrix {
            rows,
            cols,
            data,
            labels,
        })
    }
}

/// Runs every episode from a fresh state without dropout and captures the
/// pooled features at each strided frame.
pub fn export_features(
    net: &Network,
    stats: &NormStats,
    episodes: &[Episode],
    stride: usize,
    exec: Execution,
) -> Result<FeatureMatrix> {
    let masks = net.no_dropout();
    let per_episode = exec.map(episodes, |ep| -> Result<Vec<(Vec<f64>, Mode)>> {
        let mut state = net.reset_state();
        let mut rows = Vec::new();
        for i in subsample_stride(ep.len(), stride)? {
            let rec = &ep.records()[i];
            let x = normalize_with(&rec.obs, stats, &ColorJitter::IDENTITY);
            let (_, f, next) = net.forward_with_features(&x, rec.mode, &state, &masks)?;
            state = next;
            rows.push((f, rec.mode));
        }
        Ok(rows)
    });
    let cols = net.config().pooled_dim();
    let mut m = FeatureMatrix {
        rows: 0,
        cols,
        data: Vec::new(),
        labels: Vec::new(),
    };
    for rows in per_episode {
        for (f, mode) in rows? {
            m.data.extend_from_slice(&f);
            m.labels.push(mode.index());
            m.rows += 1;
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub train_fraction: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            train_fraction: 0.8,
            iterations: 1000,
            learning_rate: 0.5,
            l2: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub train_rows: usize,
    pub test_rows: usize,
    pub classes: usize,
}

/// Multinomial logistic regression on standardized features, fitted by
/// full-batch gradient descent on a shuffled train split and scored on the
/// held-out rest.
pub fn linear_probe(m: &FeatureMatrix, cfg: &ProbeConfig) -> Result<ProbeResult> {
    if m.rows < 2 || m.cols == 0 {
        return Err(Error::Data(format!("probe needs at least two rows, got {}", m.rows)));
    }
    let mut idx: Vec<usize> = (0..m.rows).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let n_train = ((m.rows as f64 * cfg.train_fraction).round() as usize).clamp(1, m.rows - 1);
    let (train, test) = idx.split_at(n_train);
    let d = m.cols;
    let k = m.labels.iter().max().map_or(0, |&l| l + 1);

    let mut mean = vec![0.0; d];
    let mut std = vec![0.0; d];
    for &i in train {
        mean.iter_mut().zip(m.row(i)).for_each(|(a, b)| *a += b);
    }
    mean.iter_mut().for_each(|a| *a /= train.len() as f64);
    for &i in train {
        std.iter_mut()
            .zip(m.row(i).iter().zip(&mean))
            .for_each(|(s, (x, mu))| *s += (x - mu) * (x - mu));
    }
    std.iter_mut().for_each(|s| *s = (*s / train.len() as f64).sqrt());
    let z = |i: usize| -> Vec<f64> {
        m.row(i)
            .iter()
            .zip(mean.iter().zip(&std))
            .map(|(x, (mu, s))| if *s > 1e-12 { (x - mu) / s } else { 0.0 })
            .collect()
    };
    let zt: Vec<Vec<f64>> = train.iter().map(|&i| z(i)).collect();
    let ze: Vec<Vec<f64>> = test.iter().map(|&i| z(i)).collect();

    // Weights are (d + 1) × k with the bias in the last row.
    let mut w = vec![0.0; (d + 1) * k];
    let logits = |w: &[f64], x: &[f64]| -> Vec<f64> {
        (0..k)
            .map(|c| w[d * k + c] + x.iter().enumerate().map(|(j, v)| v * w[j * k + c]).sum::<f64>())
            .collect()
    };
    let mut grad = vec![0.0; w.len()];
    for _ in 0..cfg.iterations {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (x, &i) in zt.iter().zip(train) {
            let l = logits(&w, x);
            let top = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = l.iter().map(|v| (v - top).exp()).collect();
            let s: f64 = e.iter().sum();
            for c in 0..k {
                let r = e[c] / s - if m.labels[i] == c { 1.0 } else { 0.0 };
                for (j, v) in x.iter().enumerate() {
                    grad[j * k + c] += r * v;
                }
                grad[d * k + c] += r;
            }
        }
        let n = zt.len() as f64;
        for (j, (wv, g)) in w.iter_mut().zip(&grad).enumerate() {
            let decay = if j < d * k { cfg.l2 * *wv } else { 0.0 };
            *wv -= cfg.learning_rate * (g / n + decay);
        }
    }
    let accuracy = |xs: &[Vec<f64>], rows: &[usize]| -> f64 {
        let hits = xs
            .iter()
            .zip(rows)
            .filter(|(x, &i)| {
                let l = logits(&w, x);
                let best = (0..k).fold(0, |b, c| if l[c] > l[b] { c } else { b });
                best == m.labels[i]
            })
            .count();
        hits as f64 / rows.len().max(1) as f64
    };
    Ok(ProbeResult {
        train_accuracy: accuracy(&zt, train),
        test_accuracy: accuracy(&ze, test),
        train_rows: train.len(),
        test_rows: test.len(),
        classes: k,
    })
}
