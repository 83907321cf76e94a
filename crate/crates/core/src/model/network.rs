use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::cell::{
    cell_step, cell_step_vars, CellGeometry, CellMasks, CellVarState, CellVars, MemoryCellParams, MemoryCellState,
    CELL_PARAM_NAMES,
};
use super::config::NetworkConfig;
use super::mode::{Action, Mode};
use super::params::{Binder, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
struct StageIds {
    weight: usize,
    bias: usize,
    gamma: usize,
    beta: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct LayerIds {
    stage: usize,
    geometry: CellGeometry,
    /// First parameter id of each cell; a cell owns seven consecutive ids.
    cells: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HeadIds {
    fc1_weight: usize,
    fc1_bias: usize,
    fc2_weight: usize,
    fc2_bias: usize,
}

/// States of every cell in one memory layer (four when mode-indexed, one
/// when shared).
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalLayerState {
    pub cells: Vec<MemoryCellState>,
}

impl MultimodalLayerState {
    pub fn cell_for(&self, mode: Mode) -> &MemoryCellState {
        &self.cells[cell_index(self.cells.len(), mode)]
    }
}

fn cell_index(cells: usize, mode: Mode) -> usize {
    if cells == 1 {
        0
    } else {
        mode.index()
    }
}

/// A stand-alone memory layer: per-cell parameters and states.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalLayer {
    pub params: Vec<MemoryCellParams>,
    pub state: MultimodalLayerState,
}

impl MultimodalLayer {
    /// Steps the cell selected by `mode`; the other cells are not touched.
    pub fn layer_step(&mut self, x: &Tensor, mode: Mode, masks: &CellMasks) -> Result<Tensor> {
        if self.params.len() != self.state.cells.len() || !matches!(self.params.len(), 1 | 4) {
            return Err(Error::Mismatch(format!(
                "memory layer holds {} parameter sets and {} states",
                self.params.len(),
                self.state.cells.len()
            )));
        }
        let i = cell_index(self.params.len(), mode);
        let (h, next) = cell_step(x, &self.state.cells[i], &self.params[i], masks)?;
        self.state.cells[i] = next;
        Ok(h)
    }
}

/// Recurrent state of the whole network; `None` for disabled layers.
#[derive(Debug, Clone, PartialEq)]
pub struct NetState {
    pub layers: Vec<Option<MultimodalLayerState>>,
}

impl NetState {
    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .flatten()
            .all(|l| l.cells.iter().all(MemoryCellState::is_finite))
    }
}

/// Dropout masks for one sequence, one set per enabled memory layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    pub seed: u64,
    pub layers: Vec<Option<CellMasks>>,
}

/// Network state during a taped rollout. Cells enter the tape only when
/// their mode is selected, so untouched cells keep their exact values.
#[derive(Debug)]
pub struct NetVarState {
    base: NetState,
    vars: Vec<Vec<Option<CellVarState>>>,
}

impl NetVarState {
    pub fn new(base: NetState) -> Self {
        let vars = base
            .layers
            .iter()
            .map(|l| vec![None; l.as_ref().map_or(0, |l| l.cells.len())])
            .collect();
        NetVarState { base, vars }
    }

    fn cell(&mut self, tape: &mut Tape, layer: usize, cell: usize) -> CellVarState {
        let base = &self.base;
        *self.vars[layer][cell].get_or_insert_with(|| {
            let st = &base.layers[layer].as_ref().expect("enabled layer").cells[cell];
            CellVarState::constant(tape, st)
        })
    }

    /// Cuts every recorded state out of the gradient graph.
    pub fn detach(&mut self, tape: &mut Tape) -> Result<()> {
        for v in self.vars.iter_mut().flatten().flatten() {
            *v = v.detach(tape)?;
        }
        Ok(())
    }

    pub fn finish(mut self, tape: &Tape) -> NetState {
        for (k, layer) in self.vars.iter().enumerate() {
            for (m, v) in layer.iter().enumerate() {
                if let Some(v) = v {
                    self.base.layers[k].as_mut().expect("enabled layer").cells[m] = v.to_state(tape);
                }
            }
        }
        self.base
    }
}

/// Outputs of one taped step.
#[derive(Debug, Clone, Copy)]
pub struct StepVars {
    /// Length-2 `(steering, velocity)`.
    pub action: Var,
    /// Pooled backbone features.
    pub features: Var,
}

/// Convolutional backbone with interleaved memory layers and a dense head.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    config: NetworkConfig,
    params: ParamStore,
    stage_ids: Vec<StageIds>,
    layer_ids: Vec<Option<LayerIds>>,
    head: HeadIds,
}

fn uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (3.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound))
}

impl Network {
    /// Builds a network with seeded random initialization.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut stage_ids = Vec::new();
        let mut in_ch = config.input_channels;
        for (s, st) in config.stages.iter().enumerate() {
            let fan_in = in_ch * st.kernel * st.kernel;
            let p = format!("stage{}", s + 1);
            let weight = params.push(
                format!("{p}.conv.weight"),
                uniform(&[st.width, in_ch, st.kernel, st.kernel], fan_in, &mut rng),
            );
            let bias = params.push(format!("{p}.conv.bias"), Tensor::zeros(&[st.width]));
            let gamma = params.push(format!("{p}.norm.gamma"), Tensor::full(&[st.width], 1.0));
            let beta = params.push(format!("{p}.norm.beta"), Tensor::zeros(&[st.width]));
            stage_ids.push(StageIds {
                weight,
                bias,
                gamma,
                beta,
            });
            in_ch = st.width;
        }

        let mut layer_ids: Vec<Option<LayerIds>> = vec![None; config.memory_positions.len()];
        for (k, stage) in config.enabled_memory() {
            let width = config.stages[stage].width;
            let geometry = CellGeometry {
                in_channels: width,
                channels: width,
                kernel: config.memory_kernel,
                groups: config.groups_for(width),
                eps: config.gn_eps,
            };
            let labels: Vec<&str> = if config.multimodal {
                Mode::ALL.iter().map(|m| m.name()).collect()
            } else {
                vec!["shared"]
            };
            let mut cells = Vec::new();
            for label in labels {
                let init = MemoryCellParams::init(geometry, &mut rng);
                let mut first = None;
                for (name, t) in CELL_PARAM_NAMES.iter().zip(init.tensors()) {
                    let id = params.push(format!("mem{}.{label}.{name}", k + 1), t.clone());
                    first.get_or_insert(id);
                }
                cells.push(first.expect("cell has parameters"));
            }
            layer_ids[k] = Some(LayerIds { stage, geometry, cells });
        }

        let head_in = config.head_input_dim();
        let hidden = config.head_hidden;
        let fc1_weight = params.push("head.fc1.weight", uniform(&[hidden, head_in], head_in, &mut rng));
        let fc1_bias = params.push("head.fc1.bias", Tensor::zeros(&[hidden]));
        let fc2_weight = params.push("head.fc2.weight", uniform(&[2, hidden], hidden, &mut rng));
        let fc2_bias = params.push("head.fc2.bias", Tensor::zeros(&[2]));
        Ok(Network {
            config,
            params,
            stage_ids,
            layer_ids,
            head: HeadIds {
                fc1_weight,
                fc1_bias,
                fc2_weight,
                fc2_bias,
            },
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    /// Scalar parameter count of memory layer `k` (0-based), or 0 when
    /// disabled.
    pub fn memory_layer_param_count(&self, k: usize) -> usize {
        self.layer_ids
            .get(k)
            .and_then(|l| l.as_ref())
            .map_or(0, |l| l.cells.len() * l.geometry.param_count())
    }

    /// Owned copy of the parameters of memory layer `k`'s cell for `mode`.
    pub fn cell_params(&self, k: usize, mode: Mode) -> Option<MemoryCellParams> {
        let l = self.layer_ids.get(k)?.as_ref()?;
        let first = l.cells[cell_index(l.cells.len(), mode)];
        let tensors: [Tensor; 7] = std::array::from_fn(|j| self.params.get(first + j).clone());
        MemoryCellParams::from_tensors(l.geometry, tensors).ok()
    }

    /// Zero state at the spatial sizes the backbone produces.
    pub fn reset_state(&self) -> NetState {
        let sizes = self.config.spatial_sizes();
        NetState {
            layers: self
                .layer_ids
                .iter()
                .map(|l| {
                    l.as_ref().map(|l| {
                        let s = sizes[l.stage];
                        MultimodalLayerState {
                            cells: vec![MemoryCellState::zeros(l.geometry.channels, s, s); l.cells.len()],
                        }
                    })
                })
                .collect(),
        }
    }

    /// Masks that keep every channel at rate 0.
    pub fn no_dropout(&self) -> DropoutMasks {
        DropoutMasks {
            seed: 0,
            layers: self
                .layer_ids
                .iter()
                .map(|l| {
                    l.as_ref()
                        .map(|l| CellMasks::keep_all(l.geometry.in_channels, l.geometry.channels))
                })
                .collect(),
        }
    }

    /// Samples one mask set at the configured dropout rate.
    pub fn sample_masks(&self, seed: u64) -> DropoutMasks {
        self.sample_masks_at(seed, self.config.dropout)
    }

    pub fn sample_masks_at(&self, seed: u64, rate: f64) -> DropoutMasks {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DropoutMasks {
            seed,
            layers: self
                .layer_ids
                .iter()
                .map(|l| {
                    l.as_ref()
                        .map(|l| CellMasks::sample(l.geometry.in_channels, l.geometry.channels, rate, &mut rng))
                })
                .collect(),
        }
    }

    fn check_state(&self, state: &NetState) -> Result<()> {
        let expected = self.reset_state();
        let ok = state.layers.len() == expected.layers.len()
            && state.layers.iter().zip(&expected.layers).all(|(a, b)| match (a, b) {
                (None, None) => true,
                (Some(a), Some(b)) => {
                    a.cells.len() == b.cells.len()
                        && a.cells.iter().zip(&b.cells).all(|(x, y)| {
                            x.c.shape() == y.c.shape() && x.h.shape() == y.h.shape()
                        })
                }
                _ => false,
            });
        if ok {
            Ok(())
        } else {
            Err(Error::Mismatch("network state does not match the configuration; call reset_state".into()))
        }
    }

    fn check_masks(&self, masks: &DropoutMasks) -> Result<()> {
        let ok = masks.layers.len() == self.layer_ids.len()
            && masks.layers.iter().zip(&self.layer_ids).all(|(m, l)| match (m, l) {
                (None, None) => true,
                (Some(m), Some(l)) => {
                    m.input.len() == l.geometry.in_channels
                        && m.hidden.len() == l.geometry.channels
                        && m.update.len() == l.geometry.channels
                }
                _ => false,
            });
        if ok {
            Ok(())
        } else {
            Err(Error::Mismatch("dropout masks do not match the configuration".into()))
        }
    }

    pub fn check_observation(&self, shape: &[usize]) -> Result<()> {
        let c = &self.config;
        if shape != [c.input_channels, c.input_size, c.input_size] {
            return Err(Error::Mismatch(format!(
                "observation shape {shape:?}, expected [{}, {}, {}]",
                c.input_channels, c.input_size, c.input_size
            )));
        }
        Ok(())
    }

    fn cell_vars(&self, tape: &mut Tape, binder: &mut Binder, l: &LayerIds, cell: usize) -> CellVars {
        let first = l.cells[cell];
        let v: [Var; 7] = std::array::from_fn(|j| binder.get(tape, &self.params, first + j));
        CellVars {
            geometry: l.geometry,
            wx: v[0],
            wh: v[1],
            wc_if: v[2],
            wc_o: v[3],
            bias: v[4],
            gamma: v[5],
            beta: v[6],
        }
    }

    /// One recurrent step recorded on `tape`.
    pub fn step_vars(
        &self,
        tape: &mut Tape,
        binder: &mut Binder,
        obs: Var,
        mode: Mode,
        state: &mut NetVarState,
        masks: &DropoutMasks,
    ) -> Result<StepVars> {
        self.check_observation(tape.shape(obs))?;
        let mut x = obs;
        for (s, (st, ids)) in self.config.stages.iter().zip(&self.stage_ids).enumerate() {
            let w = binder.get(tape, &self.params, ids.weight);
            let b = binder.get(tape, &self.params, ids.bias);
            let gamma = binder.get(tape, &self.params, ids.gamma);
            let beta = binder.get(tape, &self.params, ids.beta);
            let y = tape.conv2d(x, w, Some(b), st.stride, st.padding())?;
            let y = tape.group_norm(y, self.config.groups_for(st.width), gamma, beta, self.config.gn_eps)?;
            x = tape.tanh(y)?;
            for (k, l) in self.layer_ids.iter().enumerate() {
                let Some(l) = l.as_ref().filter(|l| l.stage == s) else { continue };
                let cell = cell_index(l.cells.len(), mode);
                let vars = self.cell_vars(tape, binder, l, cell);
                let prev = state.cell(tape, k, cell);
                let cell_masks = masks.layers[k].as_ref().expect("masks checked");
                let next = cell_step_vars(tape, x, prev, &vars, cell_masks)?;
                state.vars[k][cell] = Some(next);
                x = next.h;
            }
        }
        let features = tape.global_avg_pool(x)?;
        let head_in = if self.config.concat_mode() {
            let onehot = tape.constant(&Tensor::vector(&mode.one_hot()));
            tape.concat(&[features, onehot])?
        } else {
            features
        };
        let h = &self.head;
        let (w1, b1) = (
            binder.get(tape, &self.params, h.fc1_weight),
            binder.get(tape, &self.params, h.fc1_bias),
        );
        let (w2, b2) = (
            binder.get(tape, &self.params, h.fc2_weight),
            binder.get(tape, &self.params, h.fc2_bias),
        );
        let hidden = tape.dense(head_in, w1, b1)?;
        let hidden = tape.tanh(hidden)?;
        let action = tape.dense(hidden, w2, b2)?;
        tape.check_finite(action, "action head")
            .map_err(|_| Error::NonFinite("network action".into()))?;
        Ok(StepVars { action, features })
    }

    /// Starts a taped rollout from `state`, validating it against the config.
    pub fn begin(&self, state: NetState, masks: &DropoutMasks) -> Result<NetVarState> {
        self.check_state(&state)?;
        self.check_masks(masks)?;
        Ok(NetVarState::new(state))
    }

    /// Deterministic inference step.
    pub fn forward(&self, obs: &Tensor, mode: Mode, state: &NetState, masks: &DropoutMasks) -> Result<(Action, NetState)> {
        let (a, _, s) = self.forward_with_features(obs, mode, state, masks)?;
        Ok((a, s))
    }

    /// Like [`Network::forward`] but also returns the pooled features.
    pub fn forward_with_features(
        &self,
        obs: &Tensor,
        mode: Mode,
        state: &NetState,
        masks: &DropoutMasks,
    ) -> Result<(Action, Vec<f64>, NetState)> {
        self.check_observation(obs.shape())?;
        let mut tape = Tape::new();
        let mut binder = Binder::new(&self.params, false);
        let mut st = self.begin(state.clone(), masks)?;
        let o = tape.constant(obs);
        let out = self.step_vars(&mut tape, &mut binder, o, mode, &mut st, masks)?;
        let a = tape.value(out.action);
        let action = Action::new(a[0], a[1]);
        let features = tape.value(out.features).to_vec();
        Ok((action, features, st.finish(&tape)))
    }
}
