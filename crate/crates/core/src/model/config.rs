use std::fmt;
use std::str::FromStr;

use crate::error::{config_err, Error, Result};
use crate::kv::KvMap;

/// One backbone convolution stage (conv → group norm → tanh).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageConfig {
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl StageConfig {
    pub fn padding(&self) -> usize {
        self.kernel / 2
    }

    pub fn out_size(&self, input: usize) -> usize {
        (input + 2 * self.padding()).saturating_sub(self.kernel) / self.stride + 1
    }
}

/// Architecture of the controller.
///
/// Memory layer `k` sits after backbone stage `memory_positions[k]` and
/// shares that stage's channel width.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub input_channels: usize,
    pub input_size: usize,
    pub stages: Vec<StageConfig>,
    pub memory_positions: Vec<usize>,
    pub memory_enabled: Vec<bool>,
    pub multimodal: bool,
    pub dropout: f64,
    pub max_groups: usize,
    pub memory_kernel: usize,
    pub head_hidden: usize,
    pub gn_eps: f64,
}

impl Default for NetworkConfig {
    /// Desk-scale controller: four stride-2 stages (32→64→128→256) with
    /// memory layers after the first three.
    fn default() -> Self {
        NetworkConfig {
            input_channels: 3,
            input_size: 112,
            stages: [32, 64, 128, 256]
                .iter()
                .map(|&width| StageConfig {
                    width,
                    kernel: 3,
                    stride: 2,
                })
                .collect(),
            memory_positions: vec![0, 1, 2],
            memory_enabled: vec![true; 3],
            multimodal: true,
            dropout: 0.3,
            max_groups: 32,
            memory_kernel: 3,
            head_hidden: 64,
            gn_eps: 1e-5,
        }
    }
}

/// Largest divisor of `width` not exceeding `max_groups`.
pub fn group_count(width: usize, max_groups: usize) -> usize {
    (1..=max_groups.min(width).max(1))
        .rev()
        .find(|g| width % g == 0)
        .unwrap_or(1)
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(config_err("at least one backbone stage is required"));
        }
        if self.input_channels == 0 || self.head_hidden == 0 {
            return Err(config_err("input channels and head width must be positive"));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.width == 0 || s.kernel == 0 || s.stride == 0 {
                return Err(config_err(format!("stage {i} has a zero width, kernel or stride")));
            }
        }
        let mut size = self.input_size;
        let mut collapses = size == 0;
        for s in &self.stages {
            collapses |= size + 2 * s.padding() < s.kernel;
            size = s.out_size(size);
        }
        if collapses {
            return Err(config_err(format!(
                "input size {} collapses before the last stage",
                self.input_size
            )));
        }
        if self.memory_positions.len() != self.memory_enabled.len() {
            return Err(config_err("memory_positions and memory_enabled differ in length"));
        }
        let mut last: Option<usize> = None;
        for (&p, &on) in self.memory_positions.iter().zip(&self.memory_enabled) {
            if p >= self.stages.len() {
                return Err(config_err(format!("memory layer placed after missing stage {p}")));
            }
            if on {
                if last.is_some_and(|l| p <= l) {
                    return Err(config_err("enabled memory layers must be strictly increasing"));
                }
                last = Some(p);
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(config_err(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.memory_kernel % 2 == 0 {
            return Err(config_err("memory kernel must be odd to preserve spatial size"));
        }
        if self.max_groups == 0 || !(self.gn_eps > 0.0) {
            return Err(config_err("max_groups and gn_eps must be positive"));
        }
        Ok(())
    }

    /// Output side length after each stage.
    pub fn spatial_sizes(&self) -> Vec<usize> {
        let mut size = self.input_size;
        self.stages
            .iter()
            .map(|s| {
                size = s.out_size(size);
                size
            })
            .collect()
    }

    pub fn groups_for(&self, width: usize) -> usize {
        group_count(width, self.max_groups)
    }

    /// `(layer index, stage index)` for each enabled memory layer.
    pub fn enabled_memory(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.memory_positions
            .iter()
            .zip(&self.memory_enabled)
            .enumerate()
            .filter(|(_, (_, &on))| on)
            .map(|(k, (&p, _))| (k, p))
    }

    pub fn memory_layer_count(&self) -> usize {
        self.memory_enabled.iter().filter(|&&on| on).count()
    }

    /// Number of cells per memory layer.
    pub fn cells_per_layer(&self) -> usize {
        if self.multimodal {
            4
        } else {
            1
        }
    }

    /// When the memory is not mode-indexed the mode reaches the head as a
    /// one-hot vector appended to the pooled features.
    pub fn concat_mode(&self) -> bool {
        !self.multimodal || self.memory_layer_count() == 0
    }

    pub fn pooled_dim(&self) -> usize {
        self.stages.last().map(|s| s.width).unwrap_or(0)
    }

    pub fn head_input_dim(&self) -> usize {
        self.pooled_dim() + if self.concat_mode() { 4 } else { 0 }
    }

    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::new();
        m.set("input_channels", self.input_channels);
        m.set("input_size", self.input_size);
        m.set_list("stage_widths", &self.stages.iter().map(|s| s.width).collect::<Vec<_>>());
        m.set_list("stage_kernels", &self.stages.iter().map(|s| s.kernel).collect::<Vec<_>>());
        m.set_list("stage_strides", &self.stages.iter().map(|s| s.stride).collect::<Vec<_>>());
        m.set_list("memory_positions", &self.memory_positions);
        m.set_list("memory_enabled", &self.memory_enabled);
        m.set("multimodal", self.multimodal);
        m.set("dropout", self.dropout);
        m.set("max_groups", self.max_groups);
        m.set("memory_kernel", self.memory_kernel);
        m.set("head_hidden", self.head_hidden);
        m.set("gn_eps", self.gn_eps);
        m
    }

    /// Missing keys fall back to [`NetworkConfig::default`].
    pub fn from_kv(m: &KvMap) -> Result<Self> {
        let d = NetworkConfig::default();
        let widths = m.list_or("stage_widths", &d.stages.iter().map(|s| s.width).collect::<Vec<_>>())?;
        let kernels = m.list_or("stage_kernels", &vec![3; widths.len()])?;
        let strides = m.list_or("stage_strides", &vec![2; widths.len()])?;
        if kernels.len() != widths.len() || strides.len() != widths.len() {
            return Err(config_err("stage_widths, stage_kernels and stage_strides differ in length"));
        }
        let positions = m.list_or("memory_positions", &d.memory_positions)?;
        let enabled = m.list_or("memory_enabled", &vec![true; positions.len()])?;
        let cfg = NetworkConfig {
            input_channels: m.get_or("input_channels", d.input_channels)?,
            input_size: m.get_or("input_size", d.input_size)?,
            stages: widths
                .iter()
                .zip(&kernels)
                .zip(&strides)
                .map(|((&width, &kernel), &stride)| StageConfig { width, kernel, stride })
                .collect(),
            memory_positions: positions,
            memory_enabled: enabled,
            multimodal: m.get_or("multimodal", d.multimodal)?,
            dropout: m.get_or("dropout", d.dropout)?,
            max_groups: m.get_or("max_groups", d.max_groups)?,
            memory_kernel: m.get_or("memory_kernel", d.memory_kernel)?,
            head_hidden: m.get_or("head_hidden", d.head_hidden)?,
            gn_eps: m.get_or("gn_eps", d.gn_eps)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Architecture ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Full,
    NoMem,
    L1Only,
    L3Only,
    NoMultimodal,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoMem,
        Variant::L1Only,
        Variant::L3Only,
        Variant::NoMultimodal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoMem => "no-mem",
            Variant::L1Only => "L1-only",
            Variant::L3Only => "L3-only",
            Variant::NoMultimodal => "no-multimodal",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Variant> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| config_err(format!("unknown ablation variant {s:?}")))
    }
}

/// Returns `config` with memory layers or mode-indexing switched off as
/// the variant requires. Channel widths and every other field are kept.
pub fn build_ablation(config: &NetworkConfig, variant: Variant) -> Result<NetworkConfig> {
    config.validate()?;
    let n = config.memory_enabled.len();
    if n == 0 && variant != Variant::NoMem {
        return Err(config_err("configuration has no memory layers to ablate"));
    }
    let mut out = config.clone();
    match variant {
        Variant::Full => {
            out.memory_enabled = vec![true; n];
            out.multimodal = true;
        }
        Variant::NoMem => out.memory_enabled = vec![false; n],
        Variant::L1Only => {
            out.memory_enabled = (0..n).map(|k| k == 0).collect();
            out.multimodal = true;
        }
        Variant::L3Only => {
            out.memory_enabled = (0..n).map(|k| k == n - 1).collect();
            out.multimodal = true;
        }
        Variant::NoMultimodal => {
            out.memory_enabled = vec![true; n];
            out.multimodal = false;
        }
    }
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_downsamples() {
        let c = NetworkConfig::default();
        c.validate().unwrap();
        assert_eq!(c.spatial_sizes(), vec![56, 28, 14, 7]);
        assert_eq!(c.pooled_dim(), 256);
        assert_eq!(c.head_input_dim(), 256);
    }

    #[test]
    fn group_count_divides_width() {
        assert_eq!(group_count(256, 32), 32);
        assert_eq!(group_count(8, 32), 8);
        assert_eq!(group_count(12, 8), 6);
        assert_eq!(group_count(1, 32), 1);
        for w in 1..100 {
            let g = group_count(w, 32);
            assert_eq!(w % g, 0);
            assert!(g <= 32);
        }
    }

    #[test]
    fn ablations() {
        let base = NetworkConfig::default();
        let full = build_ablation(&base, Variant::Full).unwrap();
        assert_eq!(full.memory_layer_count(), 3);
        assert!(full.multimodal);
        let none = build_ablation(&base, Variant::NoMem).unwrap();
        assert_eq!(none.memory_layer_count(), 0);
        assert!(none.concat_mode());
        let shared = build_ablation(&base, Variant::NoMultimodal).unwrap();
        assert_eq!(shared.memory_layer_count(), 3);
        assert_eq!(shared.cells_per_layer(), 1);
        assert_eq!(shared.head_input_dim(), 260);
        assert_eq!(build_ablation(&base, Variant::L1Only).unwrap().memory_enabled, vec![true, false, false]);
        assert_eq!(build_ablation(&base, Variant::L3Only).unwrap().memory_enabled, vec![false, false, true]);
        for v in Variant::ALL {
            let c = build_ablation(&base, v).unwrap();
            assert_eq!(c.stages, base.stages);
            assert_eq!(c.dropout, base.dropout);
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("L2-only".parse::<Variant>().is_err());
    }

    #[test]
    fn validation_errors() {
        let mut c = NetworkConfig::default();
        c.memory_positions = vec![1, 1, 2];
        assert!(c.validate().is_err());
        let mut c = NetworkConfig::default();
        c.memory_positions = vec![0, 1, 7];
        assert!(c.validate().is_err());
        let mut c = NetworkConfig::default();
        c.dropout = 1.0;
        assert!(c.validate().is_err());
        let mut c = NetworkConfig::default();
        c.input_size = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn kv_roundtrip() {
        let mut c = NetworkConfig::default();
        c.stages.truncate(3);
        c.multimodal = false;
        c.memory_enabled = vec![true, false, true];
        let back = NetworkConfig::from_kv(&c.to_kv()).unwrap();
        assert_eq!(back, c);
    }
}
