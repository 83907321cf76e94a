use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use decision::data::{
    build_sequences, decode_dataset, default_target, load_dataset, rebalance, save_dataset, DatasetManifest, Episode,
};
use decision::error::Error;
use decision::eval::{
    export_features, grad_check, linear_probe, run_benchmark, trial_seed, BenchmarkConfig, GradCheckOptions, GradReport,
    MetricsReport, NetPolicy, ProbeConfig,
};
use decision::experiment::{Experiment, TrainedModel};
use decision::kv::KvMap;
use decision::model::{Checkpoint, Mode, Variant};
use decision::par::Execution;
use decision::sim::{collect_interventions, TaskKind, TaskSpec};
use decision::tensor::Tensor;
use decision::train::{write_log_csv, CheckpointAt};
use thiserror::Error;

/// Memory-augmented visuomotor navigation: data, training and evaluation.
#[derive(Debug, Parser)]
#[command(name = "decision", version)]
struct Cli {
    /// Base seed; overrides the configured training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Experiment file in `key = value` form.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Csv,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Collect oracle demonstrations.
    GenData {
        #[arg(long)]
        task: Option<TaskKind>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Run the learner with expert takeovers and append the takeovers to a dataset.
    CollectDagger {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 10)]
        trials: usize,
    },
    /// Show the per-mode sampling weights training would use.
    Rebalance {
        #[arg(long)]
        data: PathBuf,
    },
    /// Fit a variant on a dataset; writes decay checkpoints next to `--out`
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "full")]
        variant: Variant,
        /// Per-iteration loss log as CSV.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Success and completion rates of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Tasks to run; defaults to the checkpoint's task.
        #[arg(long, value_delimiter = ',')]
        task: Vec<TaskKind>,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        /// Several base seeds; `--seed` gives a single one.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Evaluate without sampled dropout masks.
        #[arg(long)]
        no_mc_dropout: bool,
    },
    /// Train and evaluate each architecture variant on one dataset.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',')]
        variants: Vec<Variant>,
        #[arg(long, default_value_t = 10)]
        trials: usize,
    },
    /// Finite-difference check of every layer and a short network rollout.
    Gradcheck {
        /// Perturb the analytic gradient of this group.
        #[arg(long)]
        corrupt: Option<String>,
        #[arg(long, default_value_t = 12)]
        entries: usize,
        #[arg(long, default_value_t = 16)]
        input_size: usize,
    },
    /// Write pooled features with mode labels.
    ExportFeatures {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 1)]
        stride: usize,
        /// Also fit a linear mode probe and report its accuracy.
        #[arg(long)]
        probe: bool,
    },
    /// Summarize a dataset or checkpoint file.
    Inspect { path: PathBuf },
}

#[derive(Debug, Error)]
enum Failure {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("gradient check failed for {0}")]
    GradCheck(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Core(e) => match e {
                Error::Config(_) => 3,
                Error::Io(_) => 4,
                Error::Parse { .. } => 5,
                Error::Version { .. } => 6,
                Error::Truncated(_) => 7,
                Error::Checksum(_) => 8,
                Error::Format(_) => 9,
                Error::Data(_) => 10,
                Error::Mismatch(_) => 11,
                Error::NonFinite(_) => 12,
                Error::Tensor(_) => 13,
            },
            Failure::GradCheck(_) => 14,
        }
    }
}

type Result<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    match &cli.command {
        Command::GenData { task, episodes } => {
            let mut exp = experiment(cli, *task)?;
            if let Some(n) = episodes {
                exp.episodes = *n;
            }
            let eps = exp.collect(exp.train.seed, exec)?;
            save_dataset(&eps, out_path(cli)?)?;
            emit_kv(cli, &DatasetManifest::from_episodes(&eps).to_kv(), false)
        }
        Command::CollectDagger {
            checkpoint,
            data,
            trials,
        } => {
            let model = TrainedModel::load(checkpoint)?;
            let mut eps = load_dataset(data)?;
            let base = cli.seed.unwrap_or(model.experiment.train.seed);
            let exp = &model.experiment;
            let runs = exec.map_range(*trials, |i| {
                let mut policy = NetPolicy::new(&model.network, &model.stats, true);
                collect_interventions(&mut policy, &exp.task, trial_seed(base, i), &exp.dagger)
            });
            let before = eps.len();
            for r in runs {
                eps.extend(r?);
            }
            save_dataset(&eps, out_path(cli)?)?;
            let mut m = KvMap::new();
            m.set("trials", trials);
            m.set("takeovers", eps.len() - before);
            m.set("takeover_frames", eps[before..].iter().map(Episode::len).sum::<usize>());
            m.set("episodes", eps.len());
            emit_kv(cli, &m, false)
        }
        Command::Rebalance { data } => {
            let eps = load_dataset(data)?;
            let exp = experiment_for_data(cli, &eps)?;
            let seqs = build_sequences(&eps, exp.train.length, exp.train.stride)?;
            let modes: Vec<Mode> = seqs.iter().map(|s| s.salient_mode(&eps)).collect();
            let target = exp.train.target.unwrap_or_else(|| default_target(&eps, &modes));
            let weights = rebalance(&modes, &target)?;
            let mut rows = Vec::new();
            for mode in Mode::ALL {
                let idx: Vec<usize> = (0..modes.len()).filter(|&i| modes[i] == mode).collect();
                let w = idx.first().map_or(0.0, |&i| weights[i]);
                rows.push(vec![
                    mode.name().to_string(),
                    idx.len().to_string(),
                    target[mode.index()].to_string(),
                    w.to_string(),
                ]);
            }
            emit_table(cli, &["mode", "sequences", "target", "weight"], &rows)
        }
        Command::Train { data, variant, log } => {
            let eps = load_dataset(data)?;
            let exp = experiment_for_data(cli, &eps)?;
            let out = out_path(cli)?.to_path_buf();
            let outcome = exp.train_variant(*variant, &eps, exec, |at, net, stats| {
                if let CheckpointAt::Decay(epoch) = at {
                    let m = TrainedModel {
                        network: net.clone(),
                        stats: *stats,
                        variant: *variant,
                        experiment: exp.clone(),
                    };
                    m.save(&with_suffix(&out, &format!("e{epoch}")))?;
                }
                Ok(())
            })?;
            if let Some(p) = log {
                write_log_csv(&outcome.log, io::BufWriter::new(fs::File::create(p).map_err(Error::from)?))?;
            }
            let model = TrainedModel {
                network: outcome.network,
                stats: outcome.stats,
                variant: *variant,
                experiment: exp,
            };
            model.save(&out)?;
            let mut m = KvMap::new();
            m.set("variant", variant.name());
            m.set("sequences", outcome.sequences);
            m.set("parameters", model.network.param_count());
            m.set("iterations", outcome.log.len());
            if let Some(last) = decision::train::epoch_losses(&outcome.log).last() {
                m.set("final_epoch_loss", last);
            }
            m.set("weights_sha256", Checkpoint::hash(&model.network));
            emit_kv(cli, &m, false)
        }
        Command::Eval {
            checkpoint,
            task,
            trials,
            seeds,
            no_mc_dropout,
        } => {
            let model = TrainedModel::load(checkpoint)?;
            let suite = suite_for(&model, task);
            let cfg = BenchmarkConfig {
                trials: *trials,
                seeds: seed_list(cli, seeds),
                mc_dropout: !no_mc_dropout,
            };
            let report = run_benchmark(&model.network, &model.stats, &model.info(), &suite, &cfg, exec)?;
            eprintln!("inference: {:.0} steps/s", throughput(&model)?);
            emit_reports(cli, &[report])
        }
        Command::Ablate { data, variants, trials } => {
            let eps = load_dataset(data)?;
            let exp = experiment_for_data(cli, &eps)?;
            let variants = if variants.is_empty() {
                Variant::ALL.to_vec()
            } else {
                variants.clone()
            };
            let cfg = BenchmarkConfig {
                trials: *trials,
                seeds: seed_list(cli, &[]),
                mc_dropout: true,
            };
            let mut reports = Vec::new();
            for v in variants {
                let o = exp.train_variant(v, &eps, exec, |_, _, _| Ok(()))?;
                let model = TrainedModel {
                    network: o.network,
                    stats: o.stats,
                    variant: v,
                    experiment: exp.clone(),
                };
                let suite = [exp.task.clone()];
                reports.push(run_benchmark(
                    &model.network,
                    &model.stats,
                    &model.info(),
                    &suite,
                    &cfg,
                    exec,
                )?);
            }
            emit_reports(cli, &reports)
        }
        Command::Gradcheck {
            corrupt,
            entries,
            input_size,
        } => {
            let exp = experiment(cli, None)?;
            let opts = GradCheckOptions {
                entries_per_tensor: *entries,
                input_size: *input_size,
                corrupt: corrupt.clone(),
                ..GradCheckOptions::default()
            };
            let report = grad_check(&exp.net, cli.seed.unwrap_or(0), &opts)?;
            emit_gradcheck(cli, &report)?;
            if report.passed() {
                Ok(())
            } else {
                let names: Vec<&str> = report.failures().iter().map(|g| g.name.as_str()).collect();
                Err(Failure::GradCheck(names.join(", ")))
            }
        }
        Command::ExportFeatures {
            checkpoint,
            data,
            stride,
            probe,
        } => {
            let model = TrainedModel::load(checkpoint)?;
            let eps = load_dataset(data)?;
            let fm = export_features(&model.network, &model.stats, &eps, *stride, exec)?;
            let mut w = io::BufWriter::new(fs::File::create(out_path(cli)?).map_err(Error::from)?);
            fm.write(&mut w)?;
            w.flush().map_err(Error::from)?;
            let mut m = KvMap::new();
            m.set("rows", fm.rows);
            m.set("cols", fm.cols);
            if *probe {
                let cfg = ProbeConfig {
                    seed: cli.seed.unwrap_or(0),
                    ..ProbeConfig::default()
                };
                let p = linear_probe(&fm, &cfg)?;
                m.set("probe_train_accuracy", p.train_accuracy);
                m.set("probe_test_accuracy", p.test_accuracy);
                m.set("probe_test_rows", p.test_rows);
            }
            emit_kv(cli, &m, false)
        }
        Command::Inspect { path } => {
            let bytes = fs::read(path).map_err(Error::from)?;
            let m = inspect(&bytes)?;
            emit_kv(cli, &m, true)
        }
    }
}

/// Single-thread forward steps per second on a blank frame.
fn throughput(model: &TrainedModel) -> Result<f64> {
    let net = &model.network;
    let c = net.config();
    let x = Tensor::zeros(&[c.input_channels, c.input_size, c.input_size]);
    let masks = net.no_dropout();
    let mut state = net.reset_state();
    let steps = 50;
    let t = Instant::now();
    for _ in 0..steps {
        state = net.forward(&x, Mode::GoForward, &state, &masks)?.1;
    }
    Ok(steps as f64 / t.elapsed().as_secs_f64().max(1e-9))
}

fn experiment(cli: &Cli, task: Option<TaskKind>) -> Result<Experiment> {
    let mut exp = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(Error::from)?;
            let exp = Experiment::from_kv(&KvMap::parse(&text)?)?;
            if let Some(k) = task.filter(|&k| k != exp.task.kind) {
                return Err(Error::Config(format!("--task {k} conflicts with the configured task {}", exp.task.kind)).into());
            }
            exp
        }
        None => Experiment::desk(task.unwrap_or(TaskKind::Blindspot)),
    };
    if let Some(s) = cli.seed {
        exp.train.seed = s;
    }
    Ok(exp)
}

/// Experiment for training on `eps`, taking the task from the data when no
/// file is given.
fn experiment_for_data(cli: &Cli, eps: &[Episode]) -> Result<Experiment> {
    let kind = eps
        .first()
        .map(|e| e.meta.task)
        .ok_or_else(|| Error::Data("dataset has no episodes".into()))?;
    experiment(cli, cli.config.is_none().then_some(kind))
}

fn suite_for(model: &TrainedModel, tasks: &[TaskKind]) -> Vec<TaskSpec> {
    if tasks.is_empty() {
        return vec![model.experiment.task.clone()];
    }
    tasks
        .iter()
        .map(|&k| {
            if k == model.experiment.task.kind {
                model.experiment.task.clone()
            } else {
                TaskSpec::new(k).with_image_size(model.network.config().input_size)
            }
        })
        .collect()
}

fn seed_list(cli: &Cli, seeds: &[u64]) -> Vec<u64> {
    if !seeds.is_empty() {
        seeds.to_vec()
    } else {
        vec![cli.seed.unwrap_or(0)]
    }
}

fn out_path(cli: &Cli) -> Result<&Path> {
    cli.out
        .as_deref()
        .ok_or_else(|| Error::Config("this command needs --out".into()).into())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn inspect(bytes: &[u8]) -> Result<KvMap> {
    match bytes.get(..4) {
        Some(b"DCDS") => {
            let eps = decode_dataset(bytes)?;
            let mut m = KvMap::new();
            m.set("kind", "dataset");
            m.extend_prefixed("dataset", &DatasetManifest::from_episodes(&eps).to_kv());
            Ok(m)
        }
        Some(b"DCKP") => {
            let (net, meta) = Checkpoint::decode(bytes)?;
            let mut m = KvMap::new();
            m.set("kind", "checkpoint");
            m.set("parameters", net.param_count());
            m.set("weights_sha256", Checkpoint::hash(&net));
            m.extend_prefixed("net", &net.config().to_kv());
            m.extend_prefixed("meta", &meta);
            Ok(m)
        }
        _ => Err(Error::Format("neither a dataset nor a checkpoint".into()).into()),
    }
}

fn write_out(cli: &Cli, text: &str, to_file: bool) -> Result<()> {
    match (&cli.out, to_file) {
        (Some(p), true) => fs::write(p, text).map_err(Error::from)?,
        _ => io::stdout().write_all(text.as_bytes()).map_err(Error::from)?,
    }
    Ok(())
}

/// Key-value summary. With `to_file`, `--out` receives it instead of stdout.
fn emit_kv(cli: &Cli, m: &KvMap, to_file: bool) -> Result<()> {
    let text = match cli.format {
        Format::Text => m.to_text(),
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let rows = m.keys().map(|k| [k, m.get(k).unwrap_or_default()]);
            w.write_record(["key", "value"]).map_err(csv_err)?;
            for r in rows {
                w.write_record(r).map_err(csv_err)?;
            }
            String::from_utf8(w.into_inner().map_err(|e| Error::Format(e.to_string()))?)
                .map_err(|e| Error::Format(e.to_string()))?
        }
    };
    write_out(cli, &text, to_file)
}

fn emit_table(cli: &Cli, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let text = match cli.format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(header).map_err(csv_err)?;
            for r in rows {
                w.write_record(r).map_err(csv_err)?;
            }
            String::from_utf8(w.into_inner().map_err(|e| Error::Format(e.to_string()))?)
                .map_err(|e| Error::Format(e.to_string()))?
        }
        Format::Text => {
            let mut s = header.join("\t") + "\n";
            for r in rows {
                s += &(r.join("\t") + "\n");
            }
            s
        }
    };
    write_out(cli, &text, true)
}

fn emit_reports(cli: &Cli, reports: &[MetricsReport]) -> Result<()> {
    let text = match cli.format {
        Format::Csv => {
            let mut buf = Vec::new();
            MetricsReport::write_csv(reports, &mut buf)?;
            String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))?
        }
        Format::Text => {
            let mut s = String::new();
            for r in reports {
                let _ = writeln!(s, "model {} (config {}), seeds {:?}", r.model, &r.config_hash[..12.min(r.config_hash.len())], r.seeds);
                for t in &r.tasks {
                    let _ = writeln!(
                        s,
                        "  {:<10} N={:<3} n={} SR {:.2} CR {:.3} steps {:?}",
                        t.task.name(),
                        t.trials(),
                        t.n,
                        t.sr,
                        t.cr,
                        t.completed
                    );
                }
            }
            s
        }
    };
    write_out(cli, &text, true)
}

fn emit_gradcheck(cli: &Cli, report: &GradReport) -> Result<()> {
    let rows: Vec<Vec<String>> = report
        .groups
        .iter()
        .map(|g| {
            let ok = g.max_rel_err <= report.tolerance;
            vec![
                g.name.clone(),
                format!("{:.3e}", g.max_rel_err),
                g.entries.to_string(),
                if ok { "pass" } else { "FAIL" }.to_string(),
            ]
        })
        .collect();
    emit_table(cli, &["group", "max_rel_err", "entries", "status"], &rows)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}
