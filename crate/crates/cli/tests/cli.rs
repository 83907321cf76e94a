use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use decision::eval::MetricsReport;
use decision::sim::TaskKind;

const TINY: &str = "task.kind = blindspot\nepisodes = 8\ntrain.epochs = 2\ntrain.decay_epochs = 1\ntrain.iterations_per_epoch = 2\ntrain.batch_size = 4\n";

fn decision(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_decision"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn unknown_subcommand_prints_usage() {
    let dir = tempfile::tempdir().unwrap();
    let o = decision(dir.path(), &["frobnicate"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    let o = decision(dir.path(), &["eval", "--no-such-flag"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn gradcheck_passes_and_names_corrupted_group() {
    let dir = tempfile::tempdir().unwrap();
    let o = decision(dir.path(), &["gradcheck", "--seed", "0", "--entries", "4"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("mem1") && !text.contains("FAIL"));
    let o = decision(dir.path(), &["gradcheck", "--entries", "4", "--corrupt", "stage2"]);
    assert_eq!(code(&o), 14);
    assert!(String::from_utf8_lossy(&o.stderr).contains("stage2"));
}

fn pipeline(dir: &Path) -> (Vec<u8>, String) {
    fs::write(dir.join("tiny.cfg"), TINY).unwrap();
    let steps: [&[&str]; 3] = [
        &["gen-data", "--config", "tiny.cfg", "--seed", "5", "--out", "d.bin"],
        &["train", "--config", "tiny.cfg", "--seed", "5", "--data", "d.bin", "--out", "m.ckpt"],
        &["eval", "--checkpoint", "m.ckpt", "--trials", "3", "--seed", "7", "--format", "csv", "--out", "r.csv"],
    ];
    for args in steps {
        let o = decision(dir, args);
        assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    (fs::read(dir.join("m.ckpt")).unwrap(), fs::read_to_string(dir.join("r.csv")).unwrap())
}

#[test]
fn pipeline_is_reproducible_and_report_parses() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (ck_a, rep_a) = pipeline(a.path());
    let (ck_b, rep_b) = pipeline(b.path());
    assert_eq!(ck_a, ck_b);
    assert_eq!(rep_a, rep_b);
    assert!(a.path().join("m.ckpt.e1").exists());
    let reports = MetricsReport::read_csv(rep_a.as_bytes()).unwrap();
    assert_eq!(reports.len(), 1);
    let t = reports[0].task(TaskKind::Blindspot).unwrap();
    assert_eq!(t.trials(), 3);
    assert_eq!(reports[0].seeds, vec![7]);
    assert!(t.sr <= t.cr);

    let o = decision(a.path(), &["inspect", "m.ckpt"]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("kind = checkpoint") && text.contains("meta.variant = full"));
    let o = decision(a.path(), &["inspect", "d.bin"]);
    assert!(String::from_utf8(o.stdout).unwrap().contains("dataset.episodes = 8"));
}

#[test]
fn failures_map_to_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(&decision(p, &["inspect", "missing.bin"])), 4);
    fs::write(p.join("junk.bin"), b"not a file we know").unwrap();
    assert_eq!(code(&decision(p, &["inspect", "junk.bin"])), 9);
    fs::write(p.join("bad.cfg"), "no equals sign here\n").unwrap();
    assert_eq!(code(&decision(p, &["gradcheck", "--config", "bad.cfg"])), 5);
    fs::write(p.join("neg.cfg"), "task.kind = blindspot\ntrain.k1 = 3\ntrain.k2 = 8\n").unwrap();
    assert_eq!(code(&decision(p, &["gen-data", "--config", "neg.cfg", "--out", "x.bin"])), 3);

    fs::write(p.join("tiny.cfg"), TINY).unwrap();
    assert_eq!(code(&decision(p, &["gen-data", "--config", "tiny.cfg", "--out", "d.bin"])), 0);
    let bytes = fs::read(p.join("d.bin")).unwrap();
    fs::write(p.join("short.bin"), &bytes[..bytes.len() / 2]).unwrap();
    assert_eq!(code(&decision(p, &["inspect", "short.bin"])), 7);
    let mut flipped = bytes.clone();
    let last = flipped.len() - 1;
    flipped[last] ^= 0xff;
    fs::write(p.join("flip.bin"), &flipped).unwrap();
    assert_eq!(code(&decision(p, &["inspect", "flip.bin"])), 8);
}

#[test]
fn export_features_writes_header_and_probe() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("loop.cfg"), TINY.replace("blindspot", "loop")).unwrap();
    for args in [
        &["gen-data", "--config", "loop.cfg", "--out", "d.bin"][..],
        &["train", "--config", "loop.cfg", "--data", "d.bin", "--out", "m.ckpt"][..],
    ] {
        assert_eq!(code(&decision(p, args)), 0);
    }
    let o = decision(p, &["export-features", "--checkpoint", "m.ckpt", "--data", "d.bin", "--out", "f.txt", "--probe"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(p.join("f.txt")).unwrap();
    let header: Vec<usize> = text.lines().next().unwrap().split_whitespace().map(|x| x.parse().unwrap()).collect();
    assert_eq!(header[1], 17);
    assert_eq!(header[2], 16);
    assert_eq!(text.lines().count(), header[0] + 1);
    assert!(String::from_utf8(o.stdout).unwrap().contains("probe_test_accuracy"));
}
