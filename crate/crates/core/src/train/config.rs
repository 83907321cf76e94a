use crate::data::JitterConfig;
use crate::error::{config_err, Result};
use crate::kv::KvMap;
use crate::model::Mode;

/// Behaviour-cloning hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub batch_size: usize,
    /// Predictions per iteration.
    pub k1: usize,
    /// Predictions per backward pass and optimizer step.
    pub k2: usize,
    /// Sequence length in strided frames.
    pub length: usize,
    pub stride: usize,
    pub weight_decay: f64,
    pub dropout: f64,
    pub epochs: usize,
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Train on the squared norm instead of the norm.
    pub squared_loss: bool,
    pub jitter: JitterConfig,
    /// Iterations per epoch; 0 means one pass worth of sequences.
    pub iterations_per_epoch: usize,
    /// Sampling target over modes; `None` uses the default target.
    pub target: Option<[f64; Mode::COUNT]>,
}

impl Default for TrainConfig {
    /// Desk-scale defaults.
    fn default() -> Self {
        TrainConfig {
            base_lr: 1e-3 / 64.0,
            batch_size: 8,
            k1: 4,
            k2: 8,
            length: 20,
            stride: 3,
            weight_decay: 5e-4,
            dropout: 0.3,
            epochs: 30,
            decay_epochs: vec![10, 20],
            decay_factor: 0.1,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            squared_loss: false,
            jitter: JitterConfig::default(),
            iterations_per_epoch: 0,
            target: None,
        }
    }
}

impl TrainConfig {
    /// Settings used for the robot-scale model.
    pub fn paper_scale() -> Self {
        TrainConfig {
            base_lr: 1e-7,
            batch_size: 36,
            k1: 5,
            k2: 10,
            length: 35,
            epochs: 200,
            decay_epochs: vec![70, 140],
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.k1 == 0 || self.k2 == 0 || self.length == 0 || self.stride == 0 {
            return Err(config_err("batch_size, k1, k2, length and stride must be positive"));
        }
        if self.k2 % self.k1 != 0 {
            return Err(config_err(format!("k2 = {} is not a multiple of k1 = {}", self.k2, self.k1)));
        }
        if self.epochs == 0 {
            return Err(config_err("epochs must be positive"));
        }
        if self.decay_epochs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(config_err("decay epochs must be strictly increasing"));
        }
        if self.decay_epochs.last().is_some_and(|&e| e >= self.epochs) {
            return Err(config_err("decay epochs must be below the epoch count"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(config_err("dropout must be in [0, 1)"));
        }
        if !(self.base_lr >= 0.0) || !(self.weight_decay >= 0.0) || !(self.eps > 0.0) {
            return Err(config_err("learning rate, weight decay and eps must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(config_err("betas must be in [0, 1)"));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::new();
        m.set("base_lr", self.base_lr);
        m.set("batch_size", self.batch_size);
        m.set("k1", self.k1);
        m.set("k2", self.k2);
        m.set("length", self.length);
        m.set("stride", self.stride);
        m.set("weight_decay", self.weight_decay);
        m.set("dropout", self.dropout);
        m.set("epochs", self.epochs);
        m.set_list("decay_epochs", &self.decay_epochs);
        m.set("decay_factor", self.decay_factor);
        m.set("seed", self.seed);
        m.set("beta1", self.beta1);
        m.set("beta2", self.beta2);
        m.set("eps", self.eps);
        m.set("squared_loss", self.squared_loss);
        m.set("jitter_brightness", self.jitter.brightness);
        m.set("jitter_contrast", self.jitter.contrast);
        m.set("jitter_channel_shift", self.jitter.channel_shift);
        m.set("iterations_per_epoch", self.iterations_per_epoch);
        if let Some(t) = &self.target {
            m.set_list("target", t);
        }
        m
    }

    /// Missing keys fall back to [`TrainConfig::default`].
    pub fn from_kv(m: &KvMap) -> Result<Self> {
        let d = TrainConfig::default();
        let target = match m.get("target") {
            None => None,
            Some(_) => {
                let t: Vec<f64> = m.list_or("target", &[])?;
                let arr: [f64; Mode::COUNT] = t
                    .try_into()
                    .map_err(|_| config_err("target needs one weight per mode"))?;
                Some(arr)
            }
        };
        let cfg = TrainConfig {
            base_lr: m.get_or("base_lr", d.base_lr)?,
            batch_size: m.get_or("batch_size", d.batch_size)?,
            k1: m.get_or("k1", d.k1)?,
            k2: m.get_or("k2", d.k2)?,
            length: m.get_or("length", d.length)?,
            stride: m.get_or("stride", d.stride)?,
            weight_decay: m.get_or("weight_decay", d.weight_decay)?,
            dropout: m.get_or("dropout", d.dropout)?,
            epochs: m.get_or("epochs", d.epochs)?,
            decay_epochs: m.list_or("decay_epochs", &d.decay_epochs)?,
            decay_factor: m.get_or("decay_factor", d.decay_factor)?,
            seed: m.get_or("seed", d.seed)?,
            beta1: m.get_or("beta1", d.beta1)?,
            beta2: m.get_or("beta2", d.beta2)?,
            eps: m.get_or("eps", d.eps)?,
            squared_loss: m.get_or("squared_loss", d.squared_loss)?,
            jitter: JitterConfig {
                brightness: m.get_or("jitter_brightness", d.jitter.brightness)?,
                contrast: m.get_or("jitter_contrast", d.jitter.contrast)?,
                channel_shift: m.get_or("jitter_channel_shift", d.jitter.channel_shift)?,
            },
            iterations_per_epoch: m.get_or("iterations_per_epoch", d.iterations_per_epoch)?,
            target,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `base_lr · batch_size · k2`, times `decay_factor` for every decay epoch
/// already reached.
pub fn lr_schedule(cfg: &TrainConfig, epoch: usize) -> f64 {
    let base = cfg.base_lr * cfg.batch_size as f64 * cfg.k2 as f64;
    let passed = cfg.decay_epochs.iter().filter(|&&e| epoch >= e).count();
    base * cfg.decay_factor.powi(passed as i32)
}
