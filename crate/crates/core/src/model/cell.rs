use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, TensorError, Var};

/// Cell memory `c` and hidden output `h`, both `C×H×W`.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryCellState {
    pub c: Tensor,
    pub h: Tensor,
}

impl MemoryCellState {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        MemoryCellState {
            c: Tensor::zeros(&[channels, height, width]),
            h: Tensor::zeros(&[channels, height, width]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.c.is_finite() && self.h.is_finite()
    }

    /// Bitwise equality, distinguishing `0.0` from `-0.0`.
    pub fn bit_eq(&self, other: &MemoryCellState) -> bool {
        let same = |a: &Tensor, b: &Tensor| {
            a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
        };
        same(&self.c, &other.c) && same(&self.h, &other.h)
    }
}

/// Channel keep-masks for one memory layer, fixed for a whole sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMasks {
    pub rate: f64,
    /// Mask on the layer input `x_t`.
    pub input: Vec<bool>,
    /// Mask on the previous hidden state `h_{t-1}`.
    pub hidden: Vec<bool>,
    /// Mask on the candidate update `g_t`.
    pub update: Vec<bool>,
}

impl CellMasks {
    pub fn keep_all(in_channels: usize, channels: usize) -> Self {
        CellMasks {
            rate: 0.0,
            input: vec![true; in_channels],
            hidden: vec![true; channels],
            update: vec![true; channels],
        }
    }

    pub fn sample(in_channels: usize, channels: usize, rate: f64, rng: &mut impl Rng) -> Self {
        let mut draw = |n: usize| (0..n).map(|_| rng.gen::<f64>() >= rate).collect::<Vec<_>>();
        let input = draw(in_channels);
        let hidden = draw(channels);
        let update = draw(channels);
        CellMasks {
            rate,
            input,
            hidden,
            update,
        }
    }
}

/// Static shape information shared by every cell of a layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellGeometry {
    pub in_channels: usize,
    pub channels: usize,
    pub kernel: usize,
    pub groups: usize,
    pub eps: f64,
}

impl CellGeometry {
    /// Shapes of the stacked parameter tensors, in [`CellParamNames`] order.
    ///
    /// Gate blocks are stacked along the output axis as input, forget,
    /// candidate, output.
    pub fn param_shapes(&self) -> [Vec<usize>; 7] {
        let (ci, c, k) = (self.in_channels, self.channels, self.kernel);
        [
            vec![4 * c, ci, k, k],
            vec![4 * c, c, k, k],
            vec![2 * c, c, 1, 1],
            vec![c, c, 1, 1],
            vec![4 * c],
            vec![4 * c],
            vec![4 * c],
        ]
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|s| s.iter().product::<usize>()).sum()
    }
}

pub const CELL_PARAM_NAMES: [&str; 7] = ["wx", "wh", "wc_if", "wc_o", "bias", "gamma", "beta"];

/// Parameters of one memory cell.
///
/// `wx`, `wh`: input and recurrent kernels for all four gates.
/// `wc_if`: peephole 1×1 kernels from `c_{t-1}` into the input and forget
/// gates. `wc_o`: peephole 1×1 kernel from the updated `c_t` into the output
/// gate. `gamma`/`beta`: group-norm affine terms, one block per gate.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryCellParams {
    pub geometry: CellGeometry,
    pub wx: Tensor,
    pub wh: Tensor,
    pub wc_if: Tensor,
    pub wc_o: Tensor,
    pub bias: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl MemoryCellParams {
    pub fn zeros(geometry: CellGeometry) -> Self {
        let [wx, wh, wc_if, wc_o, bias, gamma, beta] = geometry.param_shapes().map(|s| Tensor::zeros(&s));
        MemoryCellParams {
            geometry,
            wx,
            wh,
            wc_if,
            wc_o,
            bias,
            gamma,
            beta,
        }
    }

    /// Fan-in scaled uniform kernels, unit gain, forget-gate shift of 1.
    pub fn init(geometry: CellGeometry, rng: &mut impl Rng) -> Self {
        let mut p = MemoryCellParams::zeros(geometry);
        let (ci, c, k) = (geometry.in_channels, geometry.channels, geometry.kernel);
        let fan_in = ((ci + c) * k * k + c) as f64;
        let bound = (3.0 / fan_in).sqrt();
        for t in [&mut p.wx, &mut p.wh, &mut p.wc_if, &mut p.wc_o] {
            t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-bound..bound));
        }
        p.gamma.data_mut().fill(1.0);
        p.beta.data_mut()[c..2 * c].fill(1.0);
        p
    }

    pub fn tensors(&self) -> [&Tensor; 7] {
        [&self.wx, &self.wh, &self.wc_if, &self.wc_o, &self.bias, &self.gamma, &self.beta]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 7] {
        [
            &mut self.wx,
            &mut self.wh,
            &mut self.wc_if,
            &mut self.wc_o,
            &mut self.bias,
            &mut self.gamma,
            &mut self.beta,
        ]
    }

    pub fn from_tensors(geometry: CellGeometry, tensors: [Tensor; 7]) -> Result<Self> {
        for ((t, shape), name) in tensors.iter().zip(geometry.param_shapes()).zip(CELL_PARAM_NAMES) {
            if t.shape() != shape.as_slice() {
                return Err(Error::Mismatch(format!(
                    "cell parameter {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        let [wx, wh, wc_if, wc_o, bias, gamma, beta] = tensors;
        Ok(MemoryCellParams {
            geometry,
            wx,
            wh,
            wc_if,
            wc_o,
            bias,
            gamma,
            beta,
        })
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> CellVars {
        let mut put = |t: &Tensor| if trainable { tape.param(t) } else { tape.constant(t) };
        CellVars {
            geometry: self.geometry,
            wx: put(&self.wx),
            wh: put(&self.wh),
            wc_if: put(&self.wc_if),
            wc_o: put(&self.wc_o),
            bias: put(&self.bias),
            gamma: put(&self.gamma),
            beta: put(&self.beta),
        }
    }
}

/// Cell parameters recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct CellVars {
    pub geometry: CellGeometry,
    pub wx: Var,
    pub wh: Var,
    pub wc_if: Var,
    pub wc_o: Var,
    pub bias: Var,
    pub gamma: Var,
    pub beta: Var,
}

impl CellVars {
    pub fn vars(&self) -> [Var; 7] {
        [self.wx, self.wh, self.wc_if, self.wc_o, self.bias, self.gamma, self.beta]
    }
}

/// Cell state recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct CellVarState {
    pub c: Var,
    pub h: Var,
}

impl CellVarState {
    pub fn constant(tape: &mut Tape, state: &MemoryCellState) -> Self {
        CellVarState {
            c: tape.constant(&state.c),
            h: tape.constant(&state.h),
        }
    }

    pub fn detach(&self, tape: &mut Tape) -> Result<Self> {
        Ok(CellVarState {
            c: tape.detach(self.c)?,
            h: tape.detach(self.h)?,
        })
    }

    pub fn to_state(&self, tape: &Tape) -> MemoryCellState {
        MemoryCellState {
            c: tape.tensor(self.c),
            h: tape.tensor(self.h),
        }
    }
}

fn gate_check(tape: &Tape, v: Var, gate: &str) -> Result<()> {
    tape.check_finite(v, gate).map_err(|e| match e {
        TensorError::NonFinite(what) => Error::NonFinite(format!("memory cell {what}")),
        other => other.into(),
    })
}

/// One modified ConvLSTM update on a tape.
///
/// Input and previous hidden state are channel-dropped; input and forget
/// gates read `c_{t-1}` through their peepholes; the candidate is dropped
/// after its tanh; the output gate reads the updated `c_t`. Each gate
/// pre-activation is group-normalized on its own.
pub fn cell_step_vars(
    tape: &mut Tape,
    x: Var,
    prev: CellVarState,
    p: &CellVars,
    masks: &CellMasks,
) -> Result<CellVarState> {
    let g = p.geometry;
    let c = g.channels;
    let pad = g.kernel / 2;

    let xd = tape.channel_dropout(x, masks.rate, &masks.input)?;
    let hd = tape.channel_dropout(prev.h, masks.rate, &masks.hidden)?;
    let ax = tape.conv2d(xd, p.wx, Some(p.bias), 1, pad)?;
    let ah = tape.conv2d(hd, p.wh, None, 1, pad)?;
    let a = tape.add(ax, ah)?;

    let peep = tape.conv2d(prev.c, p.wc_if, None, 1, 0)?;
    let a_if = tape.slice(a, 0, 2 * c)?;
    let a_if = tape.add(a_if, peep)?;
    let a_g = tape.slice(a, 2 * c, c)?;
    let pre = tape.concat(&[a_if, a_g])?;
    // Stacked normalization with three times the groups equals normalizing
    // each gate separately.
    let gamma3 = tape.slice(p.gamma, 0, 3 * c)?;
    let beta3 = tape.slice(p.beta, 0, 3 * c)?;
    let n = tape.group_norm(pre, 3 * g.groups, gamma3, beta3, g.eps)?;

    let i = tape.slice(n, 0, c)?;
    let i = tape.sigmoid(i)?;
    gate_check(tape, i, "input gate")?;
    let f = tape.slice(n, c, c)?;
    let f = tape.sigmoid(f)?;
    gate_check(tape, f, "forget gate")?;
    let cand = tape.slice(n, 2 * c, c)?;
    let cand = tape.tanh(cand)?;
    let cand = tape.channel_dropout(cand, masks.rate, &masks.update)?;
    gate_check(tape, cand, "candidate update")?;

    let keep = tape.mul(f, prev.c)?;
    let write = tape.mul(i, cand)?;
    let c_new = tape.add(keep, write)?;
    gate_check(tape, c_new, "cell memory")?;

    let a_o = tape.slice(a, 3 * c, c)?;
    let peep_o = tape.conv2d(c_new, p.wc_o, None, 1, 0)?;
    let a_o = tape.add(a_o, peep_o)?;
    let gamma_o = tape.slice(p.gamma, 3 * c, c)?;
    let beta_o = tape.slice(p.beta, 3 * c, c)?;
    let o = tape.group_norm(a_o, g.groups, gamma_o, beta_o, g.eps)?;
    let o = tape.sigmoid(o)?;
    gate_check(tape, o, "output gate")?;

    let squashed = tape.tanh(c_new)?;
    let h = tape.mul(o, squashed)?;
    gate_check(tape, h, "hidden output")?;
    Ok(CellVarState { c: c_new, h })
}

/// Value-level cell update; returns `(h_t, (c_t, h_t))`.
pub fn cell_step(
    x: &Tensor,
    state: &MemoryCellState,
    params: &MemoryCellParams,
    masks: &CellMasks,
) -> Result<(Tensor, MemoryCellState)> {
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let prev = CellVarState::constant(&mut tape, state);
    let vars = params.bind(&mut tape, false);
    let next = cell_step_vars(&mut tape, xv, prev, &vars, masks)?;
    let out = next.to_state(&tape);
    Ok((out.h.clone(), out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_geometry() -> CellGeometry {
        CellGeometry {
            in_channels: 1,
            channels: 1,
            kernel: 1,
            groups: 1,
            eps: 1e-5,
        }
    }

    #[test]
    fn zero_parameters_give_zero_state() {
        let geo = CellGeometry {
            in_channels: 3,
            channels: 4,
            kernel: 3,
            groups: 2,
            eps: 1e-5,
        };
        let p = MemoryCellParams::zeros(geo);
        let x = Tensor::from_fn(&[3, 5, 5], |i| (i as f64 * 0.37).sin());
        let (h, s) = cell_step(&x, &MemoryCellState::zeros(4, 5, 5), &p, &CellMasks::keep_all(3, 4)).unwrap();
        assert!(h.data().iter().all(|&v| v == 0.0));
        assert!(s.c.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_weight_example() {
        let mut p = MemoryCellParams::zeros(unit_geometry());
        for t in [&mut p.wx, &mut p.wh, &mut p.wc_if, &mut p.wc_o, &mut p.gamma] {
            t.data_mut().fill(1.0);
        }
        let x = Tensor::new(&[1, 1, 2], vec![1.0, -1.0]).unwrap();
        let (h, s) = cell_step(&x, &MemoryCellState::zeros(1, 1, 2), &p, &CellMasks::keep_all(1, 1)).unwrap();
        let close = |a: f64, b: f64| (a - b).abs() < 1e-3;
        assert!(close(s.c.data()[0], 0.5568) && close(s.c.data()[1], -0.2048), "{:?}", s.c);
        assert!(close(h.data()[0], 0.3696) && close(h.data()[1], -0.0543), "{h:?}");
    }

    #[test]
    fn non_finite_input_names_a_gate() {
        let mut p = MemoryCellParams::zeros(unit_geometry());
        p.wx.data_mut().fill(1.0);
        p.gamma.data_mut().fill(1.0);
        let x = Tensor::new(&[1, 1, 2], vec![f64::NAN, 0.0]).unwrap();
        let err = cell_step(&x, &MemoryCellState::zeros(1, 1, 2), &p, &CellMasks::keep_all(1, 1)).unwrap_err();
        assert!(err.to_string().contains("gate"), "{err}");
    }

    #[test]
    fn param_shapes_count() {
        let geo = CellGeometry {
            in_channels: 2,
            channels: 3,
            kernel: 3,
            groups: 1,
            eps: 1e-5,
        };
        assert_eq!(geo.param_count(), 12 * 2 * 9 + 12 * 3 * 9 + 6 * 3 + 9 + 12 * 3);
    }
}
