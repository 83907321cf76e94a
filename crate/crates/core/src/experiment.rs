//! Complete run settings: scenario, architecture, training and data
//! collection, with desk-scale presets per task.

use std::fs;
use std::path::Path;

use crate::data::{Episode, JitterConfig, NormStats};
use crate::error::{Error, Result};
use crate::eval::{config_hash, ModelInfo};
use crate::kv::KvMap;
use crate::model::{build_ablation, Checkpoint, Network, NetworkConfig, StageConfig, Variant};
use crate::par::Execution;
use crate::sim::{collect_demos, DemoConfig, InterventionConfig, TaskKind, TaskSpec};
use crate::train::{train, CheckpointAt, TrainConfig, TrainOutcome};

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub task: TaskSpec,
    pub net: NetworkConfig,
    pub train: TrainConfig,
    pub demo: DemoConfig,
    pub dagger: InterventionConfig,
    /// Oracle episodes to collect.
    pub episodes: usize,
}

impl Experiment {
    /// Settings that train in about a minute per model on one core.
    ///
    /// Colour jitter and dropout are off: at this data scale they keep the
    /// policy from learning heading correction.
    pub fn desk(kind: TaskKind) -> Experiment {
        let size = 24;
        let task = TaskSpec::new(kind).with_image_size(size);
        let net = NetworkConfig {
            input_size: size,
            stages: [8, 8, 16, 16]
                .iter()
                .map(|&width| StageConfig {
                    width,
                    kernel: 3,
                    stride: 2,
                })
                .collect(),
            memory_positions: vec![0, 1, 2],
            memory_enabled: vec![true; 3],
            dropout: 0.0,
            max_groups: 4,
            head_hidden: 32,
            ..NetworkConfig::default()
        };
        let epochs = 20;
        let train = TrainConfig {
            base_lr: 3e-3 / 64.0,
            stride: 1,
            dropout: 0.0,
            jitter: JitterConfig::NONE,
            epochs,
            decay_epochs: vec![epochs * 2 / 3],
            iterations_per_epoch: 20,
            ..TrainConfig::default()
        };
        let stride = task.control_stride;
        Experiment {
            task,
            net,
            train,
            demo: DemoConfig {
                record_every: stride,
                ..DemoConfig::default()
            },
            dagger: InterventionConfig {
                record_every: stride,
                ..InterventionConfig::default()
            },
            episodes: 200,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Experiment {
        self.train.seed = seed;
        self
    }

    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::new();
        m.set("episodes", self.episodes);
        m.extend_prefixed("task", &self.task.to_kv());
        m.extend_prefixed("net", &self.net.to_kv());
        m.extend_prefixed("train", &self.train.to_kv());
        m.extend_prefixed("demo", &self.demo.to_kv());
        m.extend_prefixed("dagger", &self.dagger.to_kv());
        m
    }

    /// Keys not given take the desk preset of `task.kind`.
    pub fn from_kv(m: &KvMap) -> Result<Experiment> {
        let kind: TaskKind = m.section("task").require("kind")?;
        let mut full = Experiment::desk(kind).to_kv();
        for k in m.keys() {
            full.set(k, m.get(k).unwrap_or_default());
        }
        let exp = Experiment {
            task: TaskSpec::from_kv(&full.section("task"))?,
            net: NetworkConfig::from_kv(&full.section("net"))?,
            train: TrainConfig::from_kv(&full.section("train"))?,
            demo: DemoConfig::from_kv(&full.section("demo"))?,
            dagger: InterventionConfig::from_kv(&full.section("dagger"))?,
            episodes: full.require("episodes")?,
        };
        exp.check()?;
        Ok(exp)
    }

    /// Cross-checks between sections.
    pub fn check(&self) -> Result<()> {
        if self.net.input_size != self.task.render.size {
            return Err(Error::Config(format!(
                "network input {} does not match image size {}",
                self.net.input_size, self.task.render.size
            )));
        }
        Ok(())
    }
}

impl Experiment {
    /// Oracle demonstrations for the experiment's task.
    pub fn collect(&self, seed: u64, exec: Execution) -> Result<Vec<Episode>> {
        collect_demos(std::slice::from_ref(&self.task), self.episodes, seed, &self.demo, exec)
    }

    /// Trains one architecture variant on `episodes`.
    pub fn train_variant(
        &self,
        variant: Variant,
        episodes: &[Episode],
        exec: Execution,
        checkpoint: impl FnMut(CheckpointAt, &Network, &NormStats) -> Result<()>,
    ) -> Result<TrainOutcome> {
        let net = build_ablation(&self.net, variant)?;
        train(&self.train, &net, episodes, exec, checkpoint)
    }

    pub fn hash(&self) -> String {
        config_hash(&self.to_kv())
    }
}

/// A trained network with what evaluation needs to run it.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub network: Network,
    pub stats: NormStats,
    pub variant: Variant,
    pub experiment: Experiment,
}

impl TrainedModel {
    pub fn info(&self) -> ModelInfo {
        ModelInfo {
            name: self.variant.name().into(),
            config_hash: self.experiment.hash(),
        }
    }

    pub fn meta(&self) -> KvMap {
        let mut m = KvMap::new();
        m.set("variant", self.variant.name());
        m.set("config_hash", self.experiment.hash());
        m.extend_prefixed("norm", &self.stats.to_kv());
        m.extend_prefixed("exp", &self.experiment.to_kv());
        m
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        Checkpoint::encode(&self.network, &self.meta())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<TrainedModel> {
        let (network, meta) = Checkpoint::decode(bytes)?;
        let stats = NormStats::from_kv(&meta.section("norm"))?;
        let variant: Variant = meta.require("variant")?;
        let experiment = Experiment::from_kv(&meta.section("exp"))?;
        let expected = build_ablation(&experiment.net, variant)?;
        let got = network.config();
        if got.stages != expected.stages || got.memory_enabled != expected.memory_enabled || got.multimodal != expected.multimodal {
            return Err(Error::Mismatch(format!(
                "checkpoint architecture does not match variant {}",
                variant.name()
            )));
        }
        Ok(TrainedModel {
            network,
            stats,
            variant,
            experiment,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<TrainedModel> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_fills_from_preset() {
        let m = KvMap::parse("task.kind = loop\ntrain.epochs = 3\ntrain.decay_epochs = 1\n").unwrap();
        let e = Experiment::from_kv(&m).unwrap();
        assert_eq!(e.train.epochs, 3);
        assert_eq!(e.net, Experiment::desk(TaskKind::Loop).net);
        assert_eq!(e.task.kind, TaskKind::Loop);
    }

    #[test]
    fn kv_roundtrip() {
        let e = Experiment::desk(TaskKind::Blindspot).with_seed(7);
        assert_eq!(Experiment::from_kv(&e.to_kv()).unwrap(), e);
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let m = KvMap::parse("task.kind = elevator\nnet.input_size = 32\n").unwrap();
        assert!(Experiment::from_kv(&m).is_err());
    }

    #[test]
    fn model_roundtrip_keeps_stats_and_variant() {
        let exp = Experiment::desk(TaskKind::Loop);
        let net_cfg = build_ablation(&exp.net, Variant::NoMultimodal).unwrap();
        let m = TrainedModel {
            network: Network::new(net_cfg, 3).unwrap(),
            stats: NormStats {
                mean: [0.1, 0.2, 0.3],
                std: [0.4, 0.5, 0.6],
            },
            variant: Variant::NoMultimodal,
            experiment: exp,
        };
        let back = TrainedModel::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back.to_bytes(), m.to_bytes());
        assert_eq!(back.stats, m.stats);
        assert_eq!(back.variant, Variant::NoMultimodal);
        assert_eq!(back.info(), m.info());
    }

    #[test]
    fn variant_must_match_architecture() {
        let exp = Experiment::desk(TaskKind::Loop);
        let m = TrainedModel {
            network: Network::new(exp.net.clone(), 3).unwrap(),
            stats: NormStats {
                mean: [0.0; 3],
                std: [1.0; 3],
            },
            variant: Variant::NoMem,
            experiment: exp,
        };
        assert!(matches!(TrainedModel::from_bytes(&m.to_bytes()), Err(Error::Mismatch(_))));
    }
}
