use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use super::episode::Episode;
use crate::error::{Error, Result};
use crate::model::Mode;
use crate::sim::TaskKind;

/// Per-sample weights whose sampled mode frequencies equal `target`.
///
/// Each sample of mode `m` gets `target[m] / count[m]`, so the weights sum
/// to one.
pub fn rebalance(modes: &[Mode], target: &[f64; Mode::COUNT]) -> Result<Vec<f64>> {
    if target.iter().any(|&t| !(t >= 0.0)) {
        return Err(Error::Config("target distribution has negative entries".into()));
    }
    let total: f64 = target.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("target distribution sums to {total}")));
    }
    let mut counts = [0usize; Mode::COUNT];
    for m in modes {
        counts[m.index()] += 1;
    }
    for m in Mode::ALL {
        if target[m.index()] > 0.0 && counts[m.index()] == 0 {
            return Err(Error::Config(format!("target puts mass on absent mode {}", m.name())));
        }
    }
    Ok(modes
        .iter()
        .map(|m| target[m.index()] / counts[m.index()] as f64)
        .collect())
}

/// Uniform over the present go-forward and turn modes, with the elevator
/// mode weighted by its share of episodes.
pub fn default_target(episodes: &[Episode], modes: &[Mode]) -> [f64; Mode::COUNT] {
    let mut present = [false; Mode::COUNT];
    for m in modes {
        present[m.index()] = true;
    }
    let mut t = [0.0; Mode::COUNT];
    let lift = Mode::TakeElevator.index();
    if present[lift] && !episodes.is_empty() {
        let share = episodes.iter().filter(|e| e.meta.task == TaskKind::Elevator).count() as f64 / episodes.len() as f64;
        t[lift] = share;
    }
    let others: Vec<usize> = (0..Mode::COUNT).filter(|&i| i != lift && present[i]).collect();
    if others.is_empty() {
        if present[lift] {
            t[lift] = 1.0;
        }
        return t;
    }
    if !present[lift] {
        t[lift] = 0.0;
    }
    let rest = 1.0 - t[lift];
    for &i in &others {
        t[i] = rest / others.len() as f64;
    }
    t
}

/// Draws sample indices with the given weights.
#[derive(Debug, Clone)]
pub struct Sampler {
    dist: WeightedIndex<f64>,
}

impl Sampler {
    pub fn new(weights: &[f64]) -> Result<Sampler> {
        let dist = WeightedIndex::new(weights).map_err(|e| Error::Data(format!("bad sampling weights: {e}")))?;
        Ok(Sampler { dist })
    }

    pub fn draw(&self, rng: &mut impl Rng) -> usize {
        self.dist.sample(rng)
    }
}
