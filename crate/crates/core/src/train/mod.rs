//! Behaviour cloning with truncated backpropagation through time.

mod config;
mod optim;
mod tbptt;

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::{lr_schedule, TrainConfig};
pub use optim::AdamW;
pub use tbptt::{
    plan_windows, prediction_loss, run_tbptt, SequenceRun, TbpttConfig, TrainSequence, WindowPlan, WindowResult,
    WindowStep,
};

use crate::data::{
    build_sequences, default_target, normalize_with, rebalance, ColorJitter, Episode, NormStats, Sampler,
    SequenceSample, ELEVATOR_FACTOR,
};
use crate::error::{Error, Result};
use crate::model::{Mode, Network, NetworkConfig};
use crate::par::Execution;
use crate::sim::derive_seed;

/// One TBPTT step with AdamW after every window. Returns the window losses.
pub fn tbptt_step(
    net: &mut Network,
    opt: &mut AdamW,
    batch: &[TrainSequence],
    cfg: TbpttConfig,
    lr: f64,
    weight_decay: f64,
    exec: Execution,
) -> Result<Vec<f64>> {
    run_tbptt(net, batch, cfg, exec, |net, step| {
        opt.update(net.params_mut().tensors_mut(), &step.grads, lr, weight_decay)
    })
}

/// One logged iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub iteration: usize,
    /// Mean window loss of the iteration.
    pub loss: f64,
    pub lr: f64,
    pub long: bool,
}

pub fn write_log_csv(rows: &[LogRow], mut out: impl Write) -> Result<()> {
    writeln!(out, "epoch,iteration,loss,lr,long")?;
    for r in rows {
        writeln!(out, "{},{},{:.9e},{:.6e},{}", r.epoch, r.iteration, r.loss, r.lr, r.long)?;
    }
    Ok(())
}

/// Per-epoch mean of the logged iteration losses.
pub fn epoch_losses(rows: &[LogRow]) -> Vec<f64> {
    let epochs = rows.iter().map(|r| r.epoch + 1).max().unwrap_or(0);
    let mut sum = vec![0.0; epochs];
    let mut n = vec![0usize; epochs];
    for r in rows {
        sum[r.epoch] += r.loss;
        n[r.epoch] += 1;
    }
    sum.iter().zip(&n).map(|(s, &k)| if k == 0 { f64::NAN } else { s / k as f64 }).collect()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network,
    pub stats: NormStats,
    pub log: Vec<LogRow>,
    pub sequences: usize,
}

/// Where a checkpoint is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointAt {
    /// Last epoch before a learning-rate decay.
    Decay(usize),
    End,
}

struct BatchSource {
    samplers: Vec<(bool, Sampler, Vec<usize>)>,
    class: Sampler,
}

impl BatchSource {
    fn new(seqs: &[SequenceSample], weights: &[f64]) -> Result<BatchSource> {
        let mut samplers = Vec::new();
        let mut mass = Vec::new();
        for long in [false, true] {
            let idx: Vec<usize> = (0..seqs.len()).filter(|&i| seqs[i].long == long).collect();
            let w: Vec<f64> = idx.iter().map(|&i| weights[i]).collect();
            let total: f64 = w.iter().sum();
            if total > 0.0 {
                samplers.push((long, Sampler::new(&w)?, idx));
                mass.push(total);
            }
        }
        if samplers.is_empty() {
            return Err(Error::Data("no sequence has positive sampling weight".into()));
        }
        Ok(BatchSource {
            class: Sampler::new(&mass)?,
            samplers,
        })
    }

    /// A length class drawn by total weight, then `n` sequences from it.
    fn draw(&self, n: usize, rng: &mut impl Rng) -> (bool, Vec<usize>) {
        let (long, sampler, idx) = &self.samplers[self.class.draw(rng)];
        (*long, (0..n).map(|_| idx[sampler.draw(rng)]).collect())
    }
}

fn materialize(
    net: &Network,
    episodes: &[Episode],
    seq: &SequenceSample,
    stats: &NormStats,
    cfg: &TrainConfig,
    seed: u64,
) -> TrainSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = ColorJitter::sample(&cfg.jitter, &mut rng);
    let masks = net.sample_masks_at(rng.gen(), cfg.dropout);
    let recs = episodes[seq.episode].records();
    TrainSequence {
        inputs: seq.frames.iter().map(|&i| normalize_with(&recs[i].obs, stats, &jitter)).collect(),
        modes: seq.frames.iter().map(|&i| recs[i].mode).collect(),
        targets: seq.frames.iter().map(|&i| recs[i].action).collect(),
        masks,
    }
}

/// Trains a fresh network on `episodes`.
///
/// `checkpoint` is called after the last epoch before each decay and after
/// the final epoch.
pub fn train(
    cfg: &TrainConfig,
    net_cfg: &NetworkConfig,
    episodes: &[Episode],
    exec: Execution,
    mut checkpoint: impl FnMut(CheckpointAt, &Network, &NormStats) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let net_cfg = NetworkConfig {
        dropout: cfg.dropout,
        ..net_cfg.clone()
    };
    let mut net = Network::new(net_cfg, derive_seed(cfg.seed, 0))?;
    if let Some(e) = episodes.iter().find(|e| e.image_size() != net.config().input_size) {
        return Err(Error::Mismatch(format!(
            "episode frames are {} px, the network takes {} px",
            e.image_size(),
            net.config().input_size
        )));
    }
    let stats = NormStats::compute(episodes)?;
    let seqs = build_sequences(episodes, cfg.length, cfg.stride)?;
    if seqs.is_empty() {
        return Err(Error::Data(format!(
            "no episode yields a sequence of {} frames at stride {}",
            cfg.length, cfg.stride
        )));
    }
    let modes: Vec<Mode> = seqs.iter().map(|s| s.salient_mode(episodes)).collect();
    let target = cfg.target.unwrap_or_else(|| default_target(episodes, &modes));
    let weights = rebalance(&modes, &target)?;
    let source = BatchSource::new(&seqs, &weights)?;
    let iterations = if cfg.iterations_per_epoch == 0 {
        seqs.len().div_ceil(cfg.batch_size)
    } else {
        cfg.iterations_per_epoch
    };
    let mut opt = AdamW::new(net.params().tensors(), cfg.beta1, cfg.beta2, cfg.eps);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1));
    let mut log = Vec::with_capacity(cfg.epochs * iterations);
    for epoch in 0..cfg.epochs {
        let lr = lr_schedule(cfg, epoch);
        for iteration in 0..iterations {
            let (long, picks) = source.draw(cfg.batch_size, &mut rng);
            let seeds: Vec<(usize, u64)> = picks.iter().map(|&i| (i, rng.gen())).collect();
            let shared = &net;
            let batch = exec.map(&seeds, |&(i, s)| materialize(shared, episodes, &seqs[i], &stats, cfg, s));
            let factor = if long { ELEVATOR_FACTOR } else { 1 };
            let tb = TbpttConfig {
                k1: cfg.k1 * factor,
                k2: cfg.k2 * factor,
                squared_loss: cfg.squared_loss,
            };
            let losses = tbptt_step(&mut net, &mut opt, &batch, tb, lr, cfg.weight_decay, exec).map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("epoch {epoch}, iteration {iteration}, {m}")),
                e => e,
            })?;
            let loss = losses.iter().sum::<f64>() / losses.len().max(1) as f64;
            log.push(LogRow {
                epoch,
                iteration,
                loss,
                lr,
                long,
            });
        }
        if cfg.decay_epochs.contains(&(epoch + 1)) {
            checkpoint(CheckpointAt::Decay(epoch + 1), &net, &stats)?;
        }
    }
    checkpoint(CheckpointAt::End, &net, &stats)?;
    Ok(TrainOutcome {
        network: net,
        stats,
        log,
        sequences: seqs.len(),
    })
}
