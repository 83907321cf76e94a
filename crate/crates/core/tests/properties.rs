mod common;

use common::{random_modes, tiny_config};
use decision::data::{rebalance, Sampler};
use decision::eval::{completion_rate, success_rate};
use decision::model::{Mode, Network};
use decision::sim::TrialResult;
use decision::tensor::{Tape, Tensor};
use decision::train::{plan_windows, AdamW};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn results(steps: &[usize], n: usize) -> Vec<TrialResult> {
    steps.iter().map(|&s| TrialResult::new(s.min(n), n).unwrap()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sr_never_exceeds_cr(n in 1usize..8, steps in prop::collection::vec(0usize..8, 1..40)) {
        let r = results(&steps, n);
        let sr = success_rate(&r, n).unwrap();
        let cr = completion_rate(&r, n).unwrap();
        prop_assert!((0.0..=1.0).contains(&sr) && (0.0..=1.0).contains(&cr));
        prop_assert!(sr <= cr);
    }

    #[test]
    fn metrics_ignore_trial_order(n in 1usize..8, steps in prop::collection::vec(0usize..8, 1..40), seed: u64) {
        use rand::seq::SliceRandom;
        let r = results(&steps, n);
        let mut shuffled = r.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(success_rate(&r, n).unwrap(), success_rate(&shuffled, n).unwrap());
        let (a, b) = (completion_rate(&r, n).unwrap(), completion_rate(&shuffled, n).unwrap());
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn rebalanced_mode_mass_hits_target(seed: u64, len in 1usize..200, raw in prop::array::uniform4(0.0f64..1.0)) {
        let modes = random_modes(&mut ChaCha8Rng::seed_from_u64(seed), len);
        let mut target = [0.0; Mode::COUNT];
        for m in &modes {
            target[m.index()] = raw[m.index()] + 0.01;
        }
        let total: f64 = target.iter().sum();
        target.iter_mut().for_each(|t| *t /= total);
        let w = rebalance(&modes, &target).unwrap();
        for m in Mode::ALL {
            let mass: f64 = modes.iter().zip(&w).filter(|(x, _)| **x == m).map(|(_, w)| w).sum();
            prop_assert!((mass - target[m.index()]).abs() < 1e-9);
        }
        prop_assert!(Sampler::new(&w).is_ok());
    }

    #[test]
    fn windows_partition_the_sequence(len in 1usize..80, k1 in 1usize..6, per in 1usize..5) {
        let k2 = k1 * per;
        let p = plan_windows(len, k1, k2).unwrap();
        let mut next = 0;
        for (i, w) in p.windows.iter().enumerate() {
            prop_assert_eq!(w.start, next);
            prop_assert!(w.len() <= k2 && !w.is_empty());
            if i + 1 < p.windows.len() {
                prop_assert_eq!(w.len(), k2);
            }
            next = w.end;
        }
        prop_assert_eq!(next, len);
    }

    #[test]
    fn zero_gradient_step_only_decays(values in prop::collection::vec(-10.0f64..10.0, 1..20), lr in 0.0f64..1.0, wd in 0.0f64..1.0) {
        let mut p = vec![Tensor::vector(&values)];
        let mut opt = AdamW::new(&p, 0.9, 0.999, 1e-8);
        opt.update(&mut p, &[vec![0.0; values.len()]], lr, wd).unwrap();
        for (x, v) in p[0].data().iter().zip(&values) {
            prop_assert!((x - v * (1.0 - lr * wd)).abs() <= 1e-12 * v.abs().max(1.0));
        }
    }

    #[test]
    fn zero_learning_rate_freezes_parameters(values in prop::collection::vec(-10.0f64..10.0, 1..20), g in -5.0f64..5.0) {
        let mut p = vec![Tensor::vector(&values)];
        let mut opt = AdamW::new(&p, 0.9, 0.999, 1e-8);
        opt.update(&mut p, &[vec![g; values.len()]], 0.0, 0.5).unwrap();
        prop_assert_eq!(p[0].data(), &values[..]);
    }

    #[test]
    fn group_norm_standardizes_each_group(seed: u64, groups in 1usize..4, per in 1usize..3, side in 1usize..5) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = groups * per;
        let x = Tensor::from_fn(&[c, side, side + 1], |_| rng.gen_range(-3.0..3.0));
        let mut tape = Tape::new();
        let xv = tape.constant(&x);
        let gamma = tape.constant(&Tensor::full(&[c], 1.0));
        let beta = tape.constant(&Tensor::zeros(&[c]));
        let y = tape.group_norm(xv, groups, gamma, beta, 1e-12).unwrap();
        let out = tape.value(y);
        let size = per * side * (side + 1);
        for g in 0..groups {
            let chunk = &out[g * size..(g + 1) * size];
            let mean = chunk.iter().sum::<f64>() / size as f64;
            prop_assert!(mean.abs() < 1e-9);
            if size > 1 && x.data()[g * size..(g + 1) * size].windows(2).any(|w| (w[0] - w[1]).abs() > 1e-3) {
                let var = chunk.iter().map(|v| v * v).sum::<f64>() / size as f64;
                prop_assert!((var - 1.0).abs() < 1e-6, "variance {}", var);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn unselected_cells_never_change(seed: u64, len in 1usize..12) {
        use rand::Rng;
        let net = Network::new(tiny_config(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x55);
        let masks = net.sample_masks(rng.gen());
        let mut state = net.reset_state();
        let c = net.config();
        for mode in random_modes(&mut rng, len) {
            let x = Tensor::from_fn(&[c.input_channels, c.input_size, c.input_size], |_| rng.gen_range(-1.0..1.0));
            let (_, next) = net.forward(&x, mode, &state, &masks).unwrap();
            for (before, after) in state.layers.iter().zip(&next.layers) {
                let (before, after) = (before.as_ref().unwrap(), after.as_ref().unwrap());
                for m in Mode::ALL.into_iter().filter(|&m| m != mode) {
                    prop_assert!(before.cell_for(m).bit_eq(after.cell_for(m)));
                }
            }
            state = next;
        }
    }
}
