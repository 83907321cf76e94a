use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{
    cell_step_vars, param_group, Binder, CellGeometry, CellMasks, CellVarState, MemoryCellParams, Mode, Network,
    NetworkConfig, ParamStore,
};
use crate::tensor::{finite_diff_grad, max_relative_error, relative_error, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Coordinates checked per network parameter tensor; 0 checks all.
    pub entries_per_tensor: usize,
    /// Input side length of the network rollout.
    pub input_size: usize,
    /// Test fixture: scale the analytic gradient of this group.
    pub corrupt: Option<String>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tolerance: 1e-4,
            entries_per_tensor: 12,
            input_size: 16,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub entries: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub tolerance: f64,
    pub groups: Vec<GroupCheck>,
}

impl GradReport {
    /// Groups above tolerance. An empty report passes.
    pub fn failures(&self) -> Vec<&GroupCheck> {
        self.groups
            .iter()
            .filter(|g| !(g.max_rel_err <= self.tolerance))
            .collect()
    }

    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }

    pub fn max_rel_err(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max)
    }
}

fn corrupt(name: &str, opts: &GradCheckOptions, g: &mut [f64]) {
    if opts.corrupt.as_deref() == Some(name) {
        g.iter_mut().for_each(|v| *v = 1.5 * *v + 1e-3);
    }
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// `Σ out ⊙ weights`, so every output element carries a distinct cotangent.
fn weighted_sum(tape: &mut Tape, out: Var, weights: &Tensor) -> Result<Var> {
    let w = tape.constant(weights);
    let p = tape.mul(out, w)?;
    Ok(tape.sum(p)?)
}

type Build<'a> = dyn Fn(&mut Tape, &[Var]) -> Result<Var> + 'a;

fn check_op(name: &str, inputs: &[Tensor], build: &Build, opts: &GradCheckOptions, rng: &mut ChaCha8Rng) -> Result<GroupCheck> {
    let eval = |xs: &[Tensor], weights: Option<&Tensor>| -> Result<(Var, Tape, Vec<Var>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(&x.clone().with_requires_grad(true))).collect();
        let out = build(&mut tape, &vars)?;
        let loss = match weights {
            Some(w) => weighted_sum(&mut tape, out, w)?,
            None => out,
        };
        Ok((loss, tape, vars))
    };
    let (probe, tape, _) = eval(inputs, None)?;
    let weights = random(tape.shape(probe), rng);
    let (loss, mut tape, vars) = eval(inputs, Some(&weights))?;
    tape.backward(loss)?;
    let mut worst: f64 = 0.0;
    let mut entries = 0;
    for j in 0..inputs.len() {
        let mut analytic = tape.grad(vars[j]).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[j].numel()]);
        corrupt(name, opts, &mut analytic);
        let numeric = finite_diff_grad(
            |x| {
                let mut xs = inputs.to_vec();
                xs[j] = x.clone();
                eval(&xs, Some(&weights)).map(|(l, t, _)| t.value(l)[0]).unwrap_or(f64::NAN)
            },
            &inputs[j],
            opts.step,
        );
        worst = worst.max(max_relative_error(&analytic, numeric.data()));
        if analytic.iter().chain(numeric.data()).any(|v| !v.is_finite()) {
            worst = f64::INFINITY;
        }
        entries += analytic.len();
    }
    Ok(GroupCheck {
        name: name.to_string(),
        max_rel_err: worst,
        entries,
    })
}

fn op_checks(opts: &GradCheckOptions, rng: &mut ChaCha8Rng) -> Result<Vec<GroupCheck>> {
    let mut out = Vec::new();
    let x = random(&[3, 5, 5], rng);
    let k = random(&[4, 3, 3, 3], rng);
    let b = random(&[4], rng);
    out.push(check_op(
        "conv2d",
        &[x.clone(), k, b],
        &|t, v| Ok(t.conv2d(v[0], v[1], Some(v[2]), 2, 1)?),
        opts,
        rng,
    )?);
    let xg = random(&[4, 3, 3], rng);
    let gamma = Tensor::from_fn(&[4], |_| rng.gen_range(0.5..1.5));
    let beta = random(&[4], rng);
    out.push(check_op(
        "group_norm",
        &[xg, gamma, beta],
        &|t, v| Ok(t.group_norm(v[0], 2, v[1], v[2], 1e-5)?),
        opts,
        rng,
    )?);
    let keep = [true, false, true];
    out.push(check_op(
        "channel_dropout",
        &[x.clone()],
        &|t, v| Ok(t.channel_dropout(v[0], 0.3, &keep)?),
        opts,
        rng,
    )?);
    let y = random(&[3, 5, 5], rng);
    out.push(check_op(
        "pointwise",
        &[x.clone(), y],
        &|t, v| {
            let s = t.sigmoid(v[0])?;
            let h = t.tanh(v[1])?;
            let m = t.mul(s, h)?;
            Ok(t.add(m, v[0])?)
        },
        opts,
        rng,
    )?);
    out.push(check_op("global_avg_pool", &[x], &|t, v| Ok(t.global_avg_pool(v[0])?), opts, rng)?);
    let xd = random(&[6], rng);
    let w = random(&[3, 6], rng);
    let bd = random(&[3], rng);
    out.push(check_op("dense", &[xd, w, bd], &|t, v| Ok(t.dense(v[0], v[1], v[2])?), opts, rng)?);
    Ok(out)
}

fn cell_check(opts: &GradCheckOptions, rng: &mut ChaCha8Rng) -> Result<GroupCheck> {
    let geometry = CellGeometry {
        in_channels: 3,
        channels: 4,
        kernel: 3,
        groups: 2,
        eps: 1e-5,
    };
    let p = MemoryCellParams::init(geometry, rng);
    let mut masks = CellMasks::sample(3, 4, 0.3, rng);
    masks.input[0] = false;
    masks.update[1] = false;
    let mut inputs: Vec<Tensor> = p.tensors().iter().map(|t| (*t).clone()).collect();
    inputs.push(random(&[3, 4, 4], rng));
    inputs.push(random(&[4, 4, 4], rng));
    inputs.push(random(&[4, 4, 4], rng));
    let wc = random(&[4, 4, 4], rng);
    let build = |t: &mut Tape, v: &[Var]| -> Result<Var> {
        let vars = crate::model::CellVars {
            geometry,
            wx: v[0],
            wh: v[1],
            wc_if: v[2],
            wc_o: v[3],
            bias: v[4],
            gamma: v[5],
            beta: v[6],
        };
        let next = cell_step_vars(t, v[7], CellVarState { c: v[8], h: v[9] }, &vars, &masks)?;
        let wcv = t.constant(&wc);
        let cw = t.mul(next.c, wcv)?;
        Ok(t.add(cw, next.h)?)
    };
    check_op("cell_step", &inputs, &build, opts, rng)
}

/// Central differences on a sample of coordinates of every tensor in
/// `store`, grouped by [`param_group`]. An empty store gives no groups.
pub fn check_param_groups(
    store: &ParamStore,
    loss_and_grad: impl Fn(&ParamStore) -> Result<(f64, Vec<Vec<f64>>)>,
    opts: &GradCheckOptions,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<GroupCheck>> {
    if store.is_empty() {
        return Ok(Vec::new());
    }
    let (_, grads) = loss_and_grad(store)?;
    let mut groups: Vec<GroupCheck> = Vec::new();
    let mut probe = store.clone();
    for id in 0..store.len() {
        let group = param_group(store.name(id)).to_string();
        let n = store.get(id).numel();
        let coords: Vec<usize> = if opts.entries_per_tensor == 0 || opts.entries_per_tensor >= n {
            (0..n).collect()
        } else {
            sample(rng, n, opts.entries_per_tensor).into_vec()
        };
        let mut analytic = grads[id].clone();
        corrupt(&group, opts, &mut analytic);
        let mut worst: f64 = 0.0;
        for &i in &coords {
            let orig = store.get(id).data()[i];
            probe.get_mut(id).data_mut()[i] = orig + opts.step;
            let plus = loss_and_grad(&probe).map(|r| r.0).unwrap_or(f64::NAN);
            probe.get_mut(id).data_mut()[i] = orig - opts.step;
            let minus = loss_and_grad(&probe).map(|r| r.0).unwrap_or(f64::NAN);
            probe.get_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let e = relative_error(analytic[i], numeric);
            worst = if e.is_nan() { f64::INFINITY } else { worst.max(e) };
        }
        match groups.iter_mut().find(|g| g.name == group) {
            Some(g) => {
                g.max_rel_err = g.max_rel_err.max(worst);
                g.entries += coords.len();
            }
            None => groups.push(GroupCheck {
                name: group,
                max_rel_err: worst,
                entries: coords.len(),
            }),
        }
    }
    Ok(groups)
}

/// Two recurrent steps of `config` at `opts.input_size` with fixed masks.
fn network_checks(config: &NetworkConfig, seed: u64, opts: &GradCheckOptions, rng: &mut ChaCha8Rng) -> Result<Vec<GroupCheck>> {
    let config = NetworkConfig {
        input_size: opts.input_size,
        ..config.clone()
    };
    let net = Network::new(config.clone(), seed)?;
    let masks = net.sample_masks_at(rng.gen(), config.dropout);
    let obs: Vec<Tensor> = (0..2).map(|_| random(&[config.input_channels, opts.input_size, opts.input_size], rng)).collect();
    let mode = Mode::ALL[rng.gen_range(0..Mode::COUNT)];
    let weights = [random(&[2], rng), random(&[2], rng)];
    let loss_and_grad = |store: &ParamStore| -> Result<(f64, Vec<Vec<f64>>)> {
        let mut tape = Tape::new();
        let mut binder = Binder::new(store, true);
        let mut st = net.begin(net.reset_state(), &masks)?;
        let mut total = None;
        let mut eval_net = net.clone();
        eval_net.params_mut().copy_from(store)?;
        for (x, w) in obs.iter().zip(&weights) {
            let xv = tape.constant(x);
            let out = eval_net.step_vars(&mut tape, &mut binder, xv, mode, &mut st, &masks)?;
            let l = weighted_sum(&mut tape, out.action, w)?;
            total = Some(match total {
                None => l,
                Some(t) => tape.add(t, l)?,
            });
        }
        let total = total.expect("two steps");
        tape.backward(total)?;
        let mut grads = store.zeros_like();
        binder.accumulate(&tape, &mut grads);
        Ok((tape.value(total)[0], grads))
    };
    check_param_groups(net.params(), loss_and_grad, opts, rng)
}

/// Finite-difference suite: every tape op used by the network, one memory
/// cell step, and a two-step rollout of `config` with fixed masks.
pub fn grad_check(config: &NetworkConfig, seed: u64, opts: &GradCheckOptions) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups = op_checks(opts, &mut rng)?;
    groups.push(cell_check(opts, &mut rng)?);
    groups.extend(network_checks(config, seed, opts, &mut rng)?);
    Ok(GradReport {
        tolerance: opts.tolerance,
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::StageConfig;

    fn tiny() -> NetworkConfig {
        NetworkConfig {
            stages: [3, 4, 4]
                .iter()
                .map(|&width| StageConfig {
                    width,
                    kernel: 3,
                    stride: 2,
                })
                .collect(),
            memory_positions: vec![0, 1],
            memory_enabled: vec![true, true],
            max_groups: 2,
            head_hidden: 4,
            ..NetworkConfig::default()
        }
    }

    #[test]
    fn fresh_network_passes() {
        let opts = GradCheckOptions {
            input_size: 8,
            ..GradCheckOptions::default()
        };
        let r = grad_check(&tiny(), 3, &opts).unwrap();
        assert!(r.passed(), "{r:?}");
        let names: Vec<&str> = r.groups.iter().map(|g| g.name.as_str()).collect();
        for n in ["conv2d", "group_norm", "channel_dropout", "cell_step", "stage1", "mem2", "head"] {
            assert!(names.contains(&n), "{names:?}");
        }
    }

    #[test]
    fn corrupted_gradient_names_the_layer() {
        let opts = GradCheckOptions {
            input_size: 8,
            corrupt: Some("mem1".into()),
            ..GradCheckOptions::default()
        };
        let r = grad_check(&tiny(), 3, &opts).unwrap();
        let failed: Vec<&str> = r.failures().iter().map(|g| g.name.as_str()).collect();
        assert_eq!(failed, vec!["mem1"]);
    }

    #[test]
    fn empty_store_is_a_vacuous_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let groups = check_param_groups(
            &ParamStore::new(),
            |_| unreachable!("nothing to evaluate"),
            &GradCheckOptions::default(),
            &mut rng,
        )
        .unwrap();
        let r = GradReport {
            tolerance: 1e-4,
            groups,
        };
        assert!(r.groups.is_empty() && r.passed());
    }
}
