mod common;

use common::{full_bptt, random_sequence, tiny_config};
use decision::data::JitterConfig;
use decision::experiment::Experiment;
use decision::model::{Network, Variant};
use decision::par::Execution;
use decision::sim::TaskKind;
use decision::train::{epoch_losses, run_tbptt, SequenceRun, TbpttConfig, TrainSequence};

/// Value-only loss of the whole batch, used for finite differences.
fn batch_loss(net: &Network, batch: &[TrainSequence]) -> f64 {
    let mut total = 0.0;
    for seq in batch {
        let mut state = net.reset_state();
        for t in 0..seq.len() {
            let (a, next) = net.forward(&seq.inputs[t], seq.modes[t], &state, &seq.masks).unwrap();
            state = next;
            total += ((a.steering - seq.targets[t].steering).powi(2) + (a.velocity - seq.targets[t].velocity).powi(2)).sqrt();
        }
    }
    total / (batch.len() * batch[0].len()) as f64
}

fn tbptt_grads(net: &Network, batch: &[TrainSequence], k1: usize, k2: usize) -> Vec<Vec<Vec<f64>>> {
    let mut net = net.clone();
    let mut out = Vec::new();
    run_tbptt(
        &mut net,
        batch,
        TbpttConfig {
            k1,
            k2,
            squared_loss: false,
        },
        Execution::default(),
        |_, step| {
            out.push(step.grads.clone());
            Ok(())
        },
    )
    .unwrap();
    out
}

#[test]
fn covering_window_equals_full_unroll() {
    let net = Network::new(tiny_config(), 11).unwrap();
    let batch: Vec<_> = (0..3).map(|s| random_sequence(&net, 9, s)).collect();
    let windows = tbptt_grads(&net, &batch, 3, 12);
    assert_eq!(windows.len(), 1);
    let reference = full_bptt(&net, &batch);
    let mut worst: f64 = 0.0;
    for (a, b) in windows[0].iter().zip(&reference) {
        for (x, y) in a.iter().zip(b) {
            worst = worst.max((x - y).abs());
        }
    }
    assert!(worst <= 1e-10, "max abs difference {worst:e}");
}

#[test]
fn full_unroll_matches_central_differences() {
    let net = Network::new(tiny_config(), 5).unwrap();
    let batch: Vec<_> = (0..2).map(|s| random_sequence(&net, 5, 100 + s)).collect();
    let grads = full_bptt(&net, &batch);
    let h = 1e-5;
    for id in 0..net.params().len() {
        let numel = net.params().get(id).numel();
        for j in [0, numel / 2, numel - 1] {
            let mut plus = net.clone();
            plus.params_mut().get_mut(id).data_mut()[j] += h;
            let mut minus = net.clone();
            minus.params_mut().get_mut(id).data_mut()[j] -= h;
            let fd = (batch_loss(&plus, &batch) - batch_loss(&minus, &batch)) / (2.0 * h);
            let g = grads[id][j];
            let rel = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-3);
            assert!(rel <= 1e-4, "{} [{j}]: analytic {g:e}, numeric {fd:e}", net.params().name(id));
        }
    }
}

#[test]
fn truncated_windows_stop_at_the_boundary() {
    let net = Network::new(tiny_config(), 2).unwrap();
    let seq = random_sequence(&net, 8, 9);
    let mut run = SequenceRun::start(&net, seq.clone(), net.reset_state(), true).unwrap();
    run.window(&net, 0..4, 1.0, false).unwrap();
    assert!(run.input_grad(0).unwrap().iter().any(|&g| g != 0.0));
    run.window(&net, 4..8, 1.0, false).unwrap();
    for t in 0..4 {
        if let Some(g) = run.input_grad(t) {
            assert!(g.iter().all(|&v| v == 0.0), "input {t} leaked gradient");
        }
    }
    assert!(run.input_grad(5).unwrap().iter().any(|&g| g != 0.0));

    // Without truncation the same early inputs do reach the late losses.
    let mut whole = SequenceRun::start(&net, seq, net.reset_state(), true).unwrap();
    let len = whole.len();
    whole.window(&net, 0..len, 1.0, false).unwrap();
    assert!(whole.input_grad(1).unwrap().iter().any(|&g| g != 0.0));
}

/// The late window depends on the early inputs only through the detached
/// boundary state.
#[test]
fn perturbing_early_inputs_leaves_late_window_gradients_unchanged() {
    let net = Network::new(tiny_config(), 4).unwrap();
    let seq = random_sequence(&net, 8, 21);
    let mut a = SequenceRun::new(&net, seq.clone()).unwrap();
    a.window(&net, 0..4, 1.0, false).unwrap();
    let boundary = a.finish();

    let mut perturbed = seq.clone();
    for x in &mut perturbed.inputs[..4] {
        x.data_mut().iter_mut().for_each(|v| *v += 0.5);
    }
    let late = |s: &TrainSequence| {
        let mut r = SequenceRun::start(&net, s.clone(), boundary.clone(), false).unwrap();
        r.window(&net, 4..8, 1.0, false).unwrap()
    };
    let g0 = late(&seq);
    let g1 = late(&perturbed);
    assert_eq!(g0, g1);
}

#[test]
fn short_training_run_lowers_the_loss() {
    let mut exp = Experiment::desk(TaskKind::Blindspot);
    exp.episodes = 30;
    exp.train.epochs = 6;
    exp.train.decay_epochs = vec![5];
    exp.train.iterations_per_epoch = 6;
    let eps = exp.collect(1, Execution::default()).unwrap();
    let out = exp.train_variant(Variant::Full, &eps, Execution::default(), |_, _, _| Ok(())).unwrap();
    let losses = epoch_losses(&out.log);
    assert_eq!(losses.len(), 6);
    assert!(losses[5] < losses[0], "{losses:?}");
}

#[test]
fn training_is_identical_across_execution_modes() {
    let mut exp = Experiment::desk(TaskKind::Loop);
    exp.episodes = 6;
    exp.train.epochs = 2;
    exp.train.decay_epochs = vec![1];
    exp.train.iterations_per_epoch = 2;
    exp.train.dropout = 0.3;
    exp.train.jitter = JitterConfig::default();
    let eps = exp.collect(3, Execution::default()).unwrap();
    let run = |exec| exp.train_variant(Variant::Full, &eps, exec, |_, _, _| Ok(())).unwrap();
    let a = run(Execution::default());
    let b = run(Execution::Sequential);
    assert_eq!(a.network.params(), b.network.params());
    assert_eq!(a.log, b.log);
}

#[test]
fn checkpoint_callback_fires_before_each_decay_and_at_the_end() {
    let mut exp = Experiment::desk(TaskKind::Blindspot);
    exp.episodes = 4;
    exp.train.epochs = 4;
    exp.train.decay_epochs = vec![1, 3];
    exp.train.iterations_per_epoch = 1;
    let eps = exp.collect(0, Execution::default()).unwrap();
    let mut seen = Vec::new();
    exp.train_variant(Variant::NoMem, &eps, Execution::default(), |at, _, _| {
        seen.push(at);
        Ok(())
    })
    .unwrap();
    use decision::train::CheckpointAt::*;
    assert_eq!(seen, vec![Decay(1), Decay(3), End]);
}
