use std::ops::Range;

use crate::error::{Error, Result};
use crate::model::{Action, Binder, DropoutMasks, Mode, NetState, NetVarState, Network};
use crate::par::Execution;
use crate::tensor::{Tape, Tensor, Var};

/// One training sequence, already normalized and augmented.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSequence {
    pub inputs: Vec<Tensor>,
    pub modes: Vec<Mode>,
    pub targets: Vec<Action>,
    /// Held fixed for the whole sequence.
    pub masks: DropoutMasks,
}

impl TrainSequence {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn check(&self) -> Result<()> {
        if self.modes.len() != self.inputs.len() || self.targets.len() != self.inputs.len() {
            return Err(Error::Mismatch(format!(
                "sequence has {} inputs, {} modes and {} targets",
                self.inputs.len(),
                self.modes.len(),
                self.targets.len()
            )));
        }
        Ok(())
    }
}

/// Chunking of a sequence into prediction chunks of `k1` and backprop
/// windows of `k2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowPlan {
    pub chunks: Vec<Range<usize>>,
    /// Chunk indices after which a backward pass and update happen.
    pub backprop_after: Vec<usize>,
    /// Prediction ranges covered by each backward pass.
    pub windows: Vec<Range<usize>>,
}

pub fn plan_windows(len: usize, k1: usize, k2: usize) -> Result<WindowPlan> {
    if k1 == 0 || k2 == 0 || k2 % k1 != 0 {
        return Err(Error::Config(format!("k2 = {k2} must be a positive multiple of k1 = {k1}")));
    }
    let per = k2 / k1;
    let chunks: Vec<Range<usize>> = (0..len).step_by(k1).map(|s| s..(s + k1).min(len)).collect();
    let mut backprop_after = Vec::new();
    let mut windows = Vec::new();
    let mut start = 0;
    for (i, c) in chunks.iter().enumerate() {
        if (i + 1) % per == 0 || i + 1 == chunks.len() {
            backprop_after.push(i);
            windows.push(start..c.end);
            start = c.end;
        }
    }
    Ok(WindowPlan {
        chunks,
        backprop_after,
        windows,
    })
}

/// Truncation and loss settings for one batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TbpttConfig {
    pub k1: usize,
    pub k2: usize,
    pub squared_loss: bool,
}

/// Per-prediction loss: `‖pred − target‖` or its square.
pub fn prediction_loss(tape: &mut Tape, pred: Var, target: &Action, squared: bool) -> Result<Var> {
    let t = tape.constant(&Tensor::vector(&target.as_array()));
    let r = tape.sub(pred, t)?;
    if squared {
        Ok(tape.sum_squares(r)?)
    } else {
        Ok(tape.norm(r)?)
    }
}

/// Taped rollout of one sequence that is backpropagated window by window.
#[derive(Debug)]
pub struct SequenceRun {
    seq: TrainSequence,
    tape: Tape,
    state: Option<NetVarState>,
    inputs: Vec<Option<Var>>,
    track_inputs: bool,
}

/// Result of one window on one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowResult {
    /// Unscaled sum of per-prediction losses.
    pub loss_sum: f64,
    pub grads: Vec<Vec<f64>>,
}

impl SequenceRun {
    pub fn new(net: &Network, seq: TrainSequence) -> Result<Self> {
        Self::start(net, seq, net.reset_state(), false)
    }

    /// Starts from `state`; with `track_inputs` the inputs are recorded as
    /// gradient-tracking leaves so [`SequenceRun::input_grad`] works.
    pub fn start(net: &Network, seq: TrainSequence, state: NetState, track_inputs: bool) -> Result<Self> {
        seq.check()?;
        let state = net.begin(state, &seq.masks)?;
        Ok(SequenceRun {
            inputs: vec![None; seq.len()],
            seq,
            tape: Tape::new(),
            state: Some(state),
            track_inputs,
        })
    }

    pub fn len(&self) -> usize {
        self.seq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seq.is_empty()
    }

    /// Runs predictions `range`, backpropagates `scale · Σ loss` into the
    /// current parameters and detaches the recurrent state.
    pub fn window(&mut self, net: &Network, range: Range<usize>, scale: f64, squared: bool) -> Result<WindowResult> {
        if range.end > self.seq.len() || range.start > range.end {
            return Err(Error::Mismatch(format!("window {range:?} outside a sequence of {}", self.seq.len())));
        }
        let tape = &mut self.tape;
        let state = self.state.as_mut().expect("state present until finish");
        let mut binder = Binder::new(net.params(), true);
        let mut losses = Vec::with_capacity(range.len());
        for t in range.clone() {
            let x = if self.track_inputs {
                tape.leaf(&self.seq.inputs[t].clone().with_requires_grad(true))
            } else {
                tape.constant(&self.seq.inputs[t])
            };
            self.inputs[t] = Some(x);
            let out = net.step_vars(tape, &mut binder, x, self.seq.modes[t], state, &self.seq.masks)?;
            losses.push(prediction_loss(tape, out.action, &self.seq.targets[t], squared)?);
        }
        let mut grads = net.params().zeros_like();
        let mut loss_sum = 0.0;
        if let Some((&first, rest)) = losses.split_first() {
            let mut total = first;
            for &l in rest {
                total = tape.add(total, l)?;
            }
            loss_sum = tape.value(total)[0];
            if !loss_sum.is_finite() {
                return Err(Error::NonFinite(format!("loss over predictions {range:?}")));
            }
            let scaled = tape.scale(total, scale)?;
            tape.zero_grads();
            tape.backward(scaled)?;
            binder.accumulate(tape, &mut grads);
        }
        state.detach(tape)?;
        Ok(WindowResult { loss_sum, grads })
    }

    /// Gradient on input `t` from the most recent window, if it was tracked
    /// and reached.
    pub fn input_grad(&self, t: usize) -> Option<&[f64]> {
        self.inputs.get(t).copied().flatten().and_then(|v| self.tape.grad(v))
    }

    pub fn finish(mut self) -> NetState {
        self.state.take().expect("state present until finish").finish(&self.tape)
    }
}

/// Gradients and loss of one backprop window summed over the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowStep {
    pub index: usize,
    pub range: Range<usize>,
    /// Mean per-prediction loss over the window and batch.
    pub loss: f64,
    pub grads: Vec<Vec<f64>>,
}

/// Walks a homogeneous batch window by window. After every window `update`
/// may change the parameters; later windows see the new values.
///
/// Each window's loss is `Σ_b Σ_t ℓ(b, t) / (B · n_window)`.
pub fn run_tbptt(
    net: &mut Network,
    batch: &[TrainSequence],
    cfg: TbpttConfig,
    exec: Execution,
    mut update: impl FnMut(&mut Network, &WindowStep) -> Result<()>,
) -> Result<Vec<f64>> {
    let Some(first) = batch.first() else {
        return Ok(Vec::new());
    };
    let len = first.len();
    if batch.iter().any(|s| s.len() != len) {
        return Err(Error::Mismatch("batch mixes sequence lengths".into()));
    }
    let plan = plan_windows(len, cfg.k1, cfg.k2)?;
    let mut runs = batch
        .iter()
        .map(|s| SequenceRun::new(net, s.clone()))
        .collect::<Result<Vec<_>>>()?;
    let mut losses = Vec::with_capacity(plan.windows.len());
    for (index, range) in plan.windows.into_iter().enumerate() {
        let n = (batch.len() * range.len()) as f64;
        let shared: &Network = net;
        let results = exec.map_mut(&mut runs, |r| r.window(shared, range.clone(), 1.0 / n, cfg.squared_loss));
        let mut grads = net.params().zeros_like();
        let mut loss = 0.0;
        for r in results {
            let r = r.map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("window {index}: {m}")),
                e => e,
            })?;
            loss += r.loss_sum;
            for (g, x) in grads.iter_mut().zip(&r.grads) {
                g.iter_mut().zip(x).for_each(|(a, b)| *a += b);
            }
        }
        let step = WindowStep {
            index,
            range,
            loss: loss / n,
            grads,
        };
        update(net, &step)?;
        losses.push(step.loss);
    }
    Ok(losses)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_plan_for_35_5_10() {
        let p = plan_windows(35, 5, 10).unwrap();
        assert_eq!(p.chunks.len(), 7);
        assert_eq!(p.backprop_after, vec![1, 3, 5, 6]);
        assert_eq!(p.windows, vec![0..10, 10..20, 20..30, 30..35]);
        assert!(plan_windows(35, 3, 10).is_err());
    }

    #[test]
    fn single_window_when_k2_covers_sequence() {
        let p = plan_windows(20, 4, 24).unwrap();
        assert_eq!(p.windows, vec![0..20]);
    }
}
