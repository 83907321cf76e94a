use rand::Rng;

use super::episode::Episode;
use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::sim::Observation;
use crate::tensor::Tensor;

/// Per-channel mean and standard deviation of pixel values in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl NormStats {
    pub const IDENTITY: NormStats = NormStats {
        mean: [0.0; 3],
        std: [1.0; 3],
    };

    /// Statistics over every frame of `episodes`.
    pub fn compute(episodes: &[Episode]) -> Result<NormStats> {
        let mut sum = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        let mut n = 0usize;
        for ep in episodes {
            for r in ep.records() {
                let bytes = r.obs.bytes();
                let plane = bytes.len() / 3;
                for c in 0..3 {
                    for &b in &bytes[c * plane..(c + 1) * plane] {
                        let v = b as f64 / 255.0;
                        sum[c] += v;
                        sq[c] += v * v;
                    }
                }
                n += plane;
            }
        }
        if n == 0 {
            return Err(Error::Data("no frames to compute statistics from".into()));
        }
        let mut s = NormStats::IDENTITY;
        for c in 0..3 {
            let mean = sum[c] / n as f64;
            let var = (sq[c] / n as f64 - mean * mean).max(0.0);
            s.mean[c] = mean;
            s.std[c] = var.sqrt();
        }
        s.check()?;
        Ok(s)
    }

    fn check(&self) -> Result<()> {
        for c in 0..3 {
            if !(self.std[c] > 1e-12) || !self.std[c].is_finite() || !self.mean[c].is_finite() {
                return Err(Error::Data(format!("channel {c} has degenerate statistics")));
            }
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::new();
        m.set_list("mean", &self.mean);
        m.set_list("std", &self.std);
        m
    }

    pub fn from_kv(m: &KvMap) -> Result<NormStats> {
        let mean: Vec<f64> = m.list_or("mean", &[0.0; 3])?;
        let std: Vec<f64> = m.list_or("std", &[1.0; 3])?;
        if mean.len() != 3 || std.len() != 3 {
            return Err(Error::Config("normalization needs three channels".into()));
        }
        let s = NormStats {
            mean: [mean[0], mean[1], mean[2]],
            std: [std[0], std[1], std[2]],
        };
        s.check()?;
        Ok(s)
    }
}

/// Ranges for colour perturbation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterConfig {
    /// Shared offset in pixel units, drawn from `±brightness`.
    pub brightness: f64,
    /// Gain drawn from `1 ± contrast`.
    pub contrast: f64,
    /// Per-channel offset in pixel units, drawn from `±channel_shift`.
    pub channel_shift: f64,
}

impl JitterConfig {
    pub const NONE: JitterConfig = JitterConfig {
        brightness: 0.0,
        contrast: 0.0,
        channel_shift: 0.0,
    };
}

impl Default for JitterConfig {
    fn default() -> Self {
        JitterConfig {
            brightness: 0.4,
            contrast: 0.4,
            channel_shift: 0.1,
        }
    }
}

/// One drawn perturbation: `z ↦ gain · z + offset[c] / std[c]` on
/// normalized values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorJitter {
    pub gain: f64,
    pub offset: [f64; 3],
}

impl ColorJitter {
    pub const IDENTITY: ColorJitter = ColorJitter {
        gain: 1.0,
        offset: [0.0; 3],
    };

    pub fn sample(cfg: &JitterConfig, rng: &mut impl Rng) -> ColorJitter {
        let mut draw = |r: f64| if r > 0.0 { rng.gen_range(-r..=r) } else { 0.0 };
        let gain = 1.0 + draw(cfg.contrast);
        let b = draw(cfg.brightness);
        let offset = [b + draw(cfg.channel_shift), b + draw(cfg.channel_shift), b + draw(cfg.channel_shift)];
        ColorJitter { gain, offset }
    }
}

/// Normalizes an observation and applies a fixed perturbation.
pub fn normalize_with(obs: &Observation, stats: &NormStats, jitter: &ColorJitter) -> Tensor {
    let n = obs.size();
    let plane = n * n;
    let bytes = obs.bytes();
    let mut data = Vec::with_capacity(bytes.len());
    for c in 0..3 {
        let (m, s) = (stats.mean[c], stats.std[c]);
        let off = jitter.offset[c] / s;
        data.extend(bytes[c * plane..(c + 1) * plane].iter().map(|&b| {
            let z = (b as f64 / 255.0 - m) / s;
            jitter.gain * z + off
        }));
    }
    Tensor::new(&[3, n, n], data).expect("observation shape")
}

/// Per-channel normalization followed by a freshly drawn colour jitter.
/// Passing no rng (evaluation) disables the jitter.
pub fn normalize_and_augment<R: Rng>(obs: &Observation, stats: &NormStats, cfg: &JitterConfig, rng: Option<&mut R>) -> Tensor {
    let jitter = match rng {
        Some(r) => ColorJitter::sample(cfg, r),
        None => ColorJitter::IDENTITY,
    };
    normalize_with(obs, stats, &jitter)
}
