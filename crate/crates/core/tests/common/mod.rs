#![allow(dead_code)]

use decision::model::{Action, Binder, Mode, Network, NetworkConfig, StageConfig};
use decision::tensor::{Tape, Tensor, Var};
use decision::train::TrainSequence;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Three stages, memory after each of the first two, 12 px input.
pub fn tiny_config() -> NetworkConfig {
    NetworkConfig {
        input_size: 12,
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
        dropout: 0.3,
        max_groups: 2,
        head_hidden: 6,
        ..NetworkConfig::default()
    }
}

pub fn random_modes(rng: &mut ChaCha8Rng, len: usize) -> Vec<Mode> {
    (0..len).map(|_| Mode::ALL[rng.gen_range(0..Mode::COUNT)]).collect()
}

pub fn random_sequence(net: &Network, len: usize, seed: u64) -> TrainSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = net.config();
    let shape = [c.input_channels, c.input_size, c.input_size];
    TrainSequence {
        inputs: (0..len).map(|_| Tensor::from_fn(&shape, |_| rng.gen_range(-1.0..1.0))).collect(),
        modes: random_modes(&mut rng, len),
        targets: (0..len)
            .map(|_| Action::new(rng.gen_range(-1.0..1.0), rng.gen_range(0.0..1.0)))
            .collect(),
        masks: net.sample_masks_at(rng.gen(), c.dropout),
    }
}

/// Whole-sequence unroll on one tape, loss `Σ ‖a − a*‖ / (B · L)`.
pub fn full_bptt(net: &Network, batch: &[TrainSequence]) -> Vec<Vec<f64>> {
    let mut grads = net.params().zeros_like();
    let n = (batch.len() * batch[0].len()) as f64;
    for seq in batch {
        let mut tape = Tape::new();
        let mut binder = Binder::new(net.params(), true);
        let mut state = net.begin(net.reset_state(), &seq.masks).unwrap();
        let mut total: Option<Var> = None;
        for t in 0..seq.len() {
            let x = tape.constant(&seq.inputs[t]);
            let out = net.step_vars(&mut tape, &mut binder, x, seq.modes[t], &mut state, &seq.masks).unwrap();
            let target = tape.constant(&Tensor::vector(&[seq.targets[t].steering, seq.targets[t].velocity]));
            let r = tape.sub(out.action, target).unwrap();
            let l = tape.norm(r).unwrap();
            total = Some(match total {
                Some(acc) => tape.add(acc, l).unwrap(),
                None => l,
            });
        }
        let scaled = tape.scale(total.unwrap(), 1.0 / n).unwrap();
        tape.backward(scaled).unwrap();
        binder.accumulate(&tape, &mut grads);
    }
    grads
}

