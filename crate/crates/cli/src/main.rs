//! `polywin`: synthesize data, pre-train, evaluate, verify and run grids.
//!
//! Every flag of a subcommand can also be given in the `[<subcommand>]` table
//! of a TOML file passed with `--config`; flags take precedence over the file,
//! which takes precedence over built-in defaults.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use polywin_core::data::{self, SyntheticSpec};
use polywin_core::encoder::{self, PRESET_TINY};
use polywin_core::eval::ProbeConfig;
use polywin_core::harness::{self, DataSource, ExperimentConfig, GridAxes};
use polywin_core::loss::{LossKind, DEFAULT_TAU};
use polywin_core::optim::OptimConfig;
use polywin_core::pretrain::{self, PretrainConfig};
use polywin_core::sampler::CropConfig;
use polywin_core::verify::{self, Group, Kernels};
use polywin_core::{Error, Result};

const RESULTS_ENV: &str = "POLYWIN_RESULTS_DIR";
const DEFAULT_RESULTS: &str = "results";
const CHECKPOINT_FILE: &str = "encoder.ckpt";
const TRACE_FILE: &str = "loss_trace.csv";
const PRETRAIN_CONFIG_FILE: &str = "pretrain_config.json";

#[derive(Parser, Debug)]
#[command(name = "polywin", version, about = "Poly-window contrastive pre-training for multichannel time series")]
struct Cli {
    /// TOML file with one table per subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log progress details to standard error.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset.
    Synth(SynthArgs),
    /// Pre-train an encoder and write its checkpoint and loss trace.
    Pretrain(PretrainArgs),
    /// Fit a linear probe on a frozen checkpoint and report metrics.
    Eval(EvalArgs),
    /// Run the built-in self-check suites.
    Verify(VerifyArgs),
    /// Run a grid of experiments.
    Grid(GridArgs),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    synth: Option<SynthArgs>,
    pretrain: Option<PretrainArgs>,
    eval: Option<EvalArgs>,
    verify: Option<VerifyArgs>,
    grid: Option<GridArgs>,
}

/// Fills every unset field of `$a` from `$b`.
macro_rules! fill {
    ($a:expr, $b:expr; $($f:ident),* $(,)?) => {
        $( if $a.$f.is_none() { $a.$f = $b.$f.take(); } )*
    };
}

fn positive(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

fn at_least_two(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v >= 2 => Ok(v),
        Ok(v) => Err(format!("must be at least 2 (got {v})")),
        Err(e) => Err(e.to_string()),
    }
}

fn loss_kind(s: &str) -> std::result::Result<LossKind, String> {
    s.parse::<LossKind>().map_err(|e| e.to_string())
}

#[derive(Args, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct SynthArgs {
    #[arg(long, value_parser = positive)]
    records: Option<usize>,
    #[arg(long, value_parser = positive)]
    channels: Option<usize>,
    #[arg(long, value_parser = positive)]
    timepoints: Option<usize>,
    #[arg(long, value_parser = positive)]
    classes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Standard deviation of the additive white noise.
    #[arg(long)]
    noise: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct PretrainArgs {
    /// Dataset directory (signals.f32 + meta.json).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Windows per record (M).
    #[arg(long, value_parser = at_least_two)]
    views: Option<usize>,
    /// Window length (L).
    #[arg(long, value_parser = positive)]
    crop: Option<usize>,
    /// Maximum pairwise overlap as a fraction of the window length.
    #[arg(long)]
    overlap: Option<f64>,
    #[arg(long, value_parser = positive)]
    epochs: Option<usize>,
    /// Records per batch (N).
    #[arg(long, value_parser = at_least_two)]
    batch: Option<usize>,
    /// geometric or arithmetic.
    #[arg(long, value_parser = loss_kind)]
    loss: Option<LossKind>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Encoder preset: tiny-1d-64/32 or resnet18-1d-512/128.
    #[arg(long)]
    preset: Option<String>,
    /// Input channels; taken from the dataset when omitted.
    #[arg(long, value_parser = positive)]
    channels: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    final_lr: Option<f64>,
    /// Apply weight decay to biases and normalization parameters too.
    #[arg(long, action = ArgAction::SetTrue)]
    #[serde(default)]
    decay_all: bool,
    /// Output directory for the checkpoint and loss trace.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the resolved configuration and exit.
    #[arg(long, action = ArgAction::SetTrue)]
    #[serde(default)]
    dry_run: bool,
}

#[derive(Args, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct EvalArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Probe training epochs.
    #[arg(long, value_parser = positive)]
    epochs: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, value_parser = positive)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    /// Report file; defaults to eval_report.json next to the checkpoint.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct VerifyArgs {
    /// Run one group: loss, sampler or metrics.
    #[arg(long)]
    only: Option<String>,
}

#[derive(Args, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct GridArgs {
    /// Dataset directory; a default synthetic dataset is used when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', value_parser = at_least_two)]
    views: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', value_parser = positive)]
    crops: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    overlaps: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', value_parser = positive)]
    epochs: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', value_parser = at_least_two)]
    batches: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', value_parser = loss_kind)]
    losses: Option<Vec<LossKind>>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, value_parser = positive)]
    workers: Option<usize>,
    /// Expand to the full ablation grid of the original study.
    #[arg(long, action = ArgAction::SetTrue)]
    #[serde(default)]
    paper_grid: bool,
    /// Skip the confirmation prompt of --paper-grid.
    #[arg(long, action = ArgAction::SetTrue)]
    #[serde(default)]
    yes: bool,
    /// Results root; overrides POLYWIN_RESULTS_DIR.
    #[arg(long)]
    results: Option<PathBuf>,
    #[arg(long)]
    tag: Option<String>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, value_parser = positive)]
    probe_epochs: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else { return Ok(FileConfig::default()) };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config file {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<ExitCode> {
    let mut file = load_file_config(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(mut a) => {
            if let Some(mut f) = file.synth.take() {
                fill!(a, f; records, channels, timepoints, classes, seed, noise, out);
            }
            cmd_synth(a)
        }
        Command::Pretrain(mut a) => {
            if let Some(mut f) = file.pretrain.take() {
                fill!(a, f; data, views, crop, overlap, epochs, batch, loss, tau, seed, preset, channels,
                    lr, weight_decay, warmup, final_lr, out);
                a.decay_all |= f.decay_all;
                a.dry_run |= f.dry_run;
            }
            cmd_pretrain(a)
        }
        Command::Eval(mut a) => {
            if let Some(mut f) = file.eval.take() {
                fill!(a, f; checkpoint, data, epochs, threshold, batch, seed, lr, out);
            }
            cmd_eval(a)
        }
        Command::Verify(mut a) => {
            if let Some(mut f) = file.verify.take() {
                fill!(a, f; only);
            }
            cmd_verify(a)
        }
        Command::Grid(mut a) => {
            if let Some(mut f) = file.grid.take() {
                fill!(a, f; data, views, crops, overlaps, epochs, batches, losses, seeds, workers, results,
                    tag, preset, tau, probe_epochs);
                a.paper_grid |= f.paper_grid;
                a.yes |= f.yes;
            }
            cmd_grid(a)
        }
    }
}

fn results_root(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(RESULTS_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_RESULTS))
}

fn cmd_synth(a: SynthArgs) -> Result<ExitCode> {
    let d = SyntheticSpec::default();
    let spec = SyntheticSpec {
        num_records: a.records.unwrap_or(d.num_records),
        channels: a.channels.unwrap_or(d.channels),
        timepoints: a.timepoints.unwrap_or(d.timepoints),
        num_classes: a.classes.unwrap_or(d.num_classes),
        noise_std: a.noise.unwrap_or(d.noise_std),
        seed: a.seed.unwrap_or(d.seed),
        ..d
    };
    let out = a.out.ok_or_else(|| Error::Config("--out is required".into()))?;
    let dataset = data::generate_synthetic(&spec)?;
    data::write_dataset_dir(&dataset, &out)?;
    println!(
        "wrote {} and {} in {}: shape ({}, {}, {}), classes {}",
        data::SIGNAL_FILE,
        data::META_FILE,
        out.display(),
        dataset.len(),
        dataset.channels(),
        dataset.timepoints(),
        dataset.class_names.join(",")
    );
    Ok(ExitCode::SUCCESS)
}

fn load_data(path: Option<&Path>) -> Result<data::Dataset> {
    let dir = path.ok_or_else(|| Error::Config("--data is required".into()))?;
    data::load_dataset_dir(dir)
}

fn build_pretrain_config(a: &PretrainArgs, channels: usize) -> Result<PretrainConfig> {
    let preset = a.preset.as_deref().unwrap_or(PRESET_TINY);
    let mut cfg = PretrainConfig::with_preset(preset, channels)?;
    let crop = CropConfig::default();
    cfg.crop = CropConfig {
        num_windows: a.views.unwrap_or(crop.num_windows),
        crop_len: a.crop.unwrap_or(crop.crop_len),
        max_overlap: a.overlap.unwrap_or(crop.max_overlap),
        ..crop
    };
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(b) = a.batch {
        cfg.batch_size = b;
    }
    if let Some(l) = a.loss {
        cfg.loss_kind = l;
    }
    cfg.tau = a.tau.unwrap_or(DEFAULT_TAU);
    cfg.seed = a.seed.unwrap_or(0);
    let o = OptimConfig::default();
    cfg.optim = OptimConfig {
        peak_lr: a.lr.unwrap_or(o.peak_lr),
        weight_decay: a.weight_decay.unwrap_or(o.weight_decay),
        warmup_steps: a.warmup.unwrap_or(o.warmup_steps),
        final_lr: a.final_lr.unwrap_or(o.final_lr),
        decay_all: a.decay_all,
        ..o
    };
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_pretrain(a: PretrainArgs) -> Result<ExitCode> {
    let dataset = match (&a.data, a.dry_run) {
        (Some(p), _) => Some(data::load_dataset_dir(p)?),
        (None, true) => None,
        (None, false) => return Err(Error::Config("--data is required".into())),
    };
    let channels = match (&dataset, a.channels) {
        (Some(d), Some(c)) if d.channels() != c => {
            return Err(Error::Config(format!("--channels {c} but the dataset has {}", d.channels())))
        }
        (Some(d), _) => d.channels(),
        (None, c) => c.unwrap_or(12),
    };
    let cfg = build_pretrain_config(&a, channels)?;
    println!("{}", serde_json::to_string_pretty(&cfg)?);
    let Some(dataset) = dataset else { return Ok(ExitCode::SUCCESS) };

    let out = a.out.clone().unwrap_or_else(|| results_root(None).join("pretrain"));
    std::fs::create_dir_all(&out)?;
    let (train, _, _) = data::split(&dataset)?;
    eprintln!(
        "pre-training on {} records: {} epochs of {} steps",
        train.len(),
        cfg.epochs,
        cfg.steps_per_epoch(train.len())
    );
    let result = pretrain::pretrain_observed(&train, &cfg, |s, _| {
        eprintln!("epoch {}/{}  loss {:.5}  {:.2}s", s.epoch, cfg.epochs, s.mean_loss, s.seconds);
        Ok(())
    })?;
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    encoder::save_checkpoint(&result.encoder, &out.join(CHECKPOINT_FILE))?;
    pretrain::write_loss_trace(&result.trace, &out.join(TRACE_FILE))?;
    std::fs::write(out.join(PRETRAIN_CONFIG_FILE), serde_json::to_string_pretty(&cfg)? + "\n")?;
    eprintln!(
        "wrote {} and {} ({:.1}s of training)",
        out.join(CHECKPOINT_FILE).display(),
        out.join(TRACE_FILE).display(),
        result.total_seconds
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(a: EvalArgs) -> Result<ExitCode> {
    let ckpt = a.checkpoint.ok_or_else(|| Error::Config("--checkpoint is required".into()))?;
    if !ckpt.is_file() {
        return Err(Error::Config(format!("checkpoint {} does not exist", ckpt.display())));
    }
    let encoder = encoder::load_checkpoint(&ckpt)?;
    let dataset = load_data(a.data.as_deref())?;
    let d = ProbeConfig::default();
    let probe = ProbeConfig {
        epochs: a.epochs.unwrap_or(d.epochs),
        threshold: a.threshold.unwrap_or(d.threshold),
        batch_size: a.batch.unwrap_or(d.batch_size),
        seed: a.seed.unwrap_or(d.seed),
    };
    let optim = OptimConfig {
        peak_lr: a.lr.unwrap_or(OptimConfig::default().peak_lr),
        ..OptimConfig::default()
    };
    eprintln!("probe: {} epochs, threshold {}", probe.epochs, probe.threshold);
    let (train, val, test) = data::split(&dataset)?;
    let outcome = harness::evaluate_encoder(&encoder, (&train, &val, &test), &probe, &optim)?;
    let report = serde_json::json!({
        "checkpoint": ckpt,
        "probe": probe,
        "best_epoch": outcome.best_epoch,
        "validation": outcome.validation,
        "test": outcome.test,
    });
    let text = serde_json::to_string_pretty(&report)? + "\n";
    let out = a
        .out
        .unwrap_or_else(|| ckpt.parent().unwrap_or(Path::new(".")).join("eval_report.json"));
    std::fs::write(&out, &text)?;
    print!("{text}");
    eprintln!("wrote {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(a: VerifyArgs) -> Result<ExitCode> {
    let only = match a.only.as_deref() {
        None => None,
        Some(g) => Some(Group::parse(g).ok_or_else(|| {
            Error::Config(format!("unknown suite group {g:?}; valid groups: loss, sampler, metrics"))
        })?),
    };
    let results = verify::run_suites(only, &Kernels::default());
    println!("{:<18} {:<8} {:>7} {:>8}  detail", "suite", "result", "checks", "seconds");
    for r in &results {
        println!(
            "{:<18} {:<8} {:>7} {:>8.2}  {}",
            r.name,
            if r.passed { "pass" } else { "FAIL" },
            r.checks,
            r.seconds,
            r.detail
        );
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    if failed.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("failed suites: {}", failed.join(", "));
        Ok(ExitCode::from(3))
    }
}

fn confirm(prompt: &str) -> bool {
    eprint!("{prompt} [y/N] ");
    let _ = std::io::stderr().flush();
    let mut line = String::new();
    std::io::stdin().lock().read_line(&mut line).is_ok() && matches!(line.trim(), "y" | "Y" | "yes")
}

fn cmd_grid(a: GridArgs) -> Result<ExitCode> {
    let root = results_root(a.results.clone());
    let source = match &a.data {
        Some(p) => DataSource::Path(p.clone()),
        None => DataSource::Synthetic(SyntheticSpec::default()),
    };
    let channels = match &source {
        DataSource::Path(p) => data::load_dataset_dir(p)?.channels(),
        DataSource::Synthetic(s) => s.channels,
    };
    let mut pretrain = PretrainConfig::with_preset(a.preset.as_deref().unwrap_or(PRESET_TINY), channels)?;
    pretrain.tau = a.tau.unwrap_or(DEFAULT_TAU);
    let base = ExperimentConfig {
        tag: a.tag.clone().unwrap_or_else(|| "grid".into()),
        data: source,
        pretrain,
        probe: ProbeConfig {
            epochs: a.probe_epochs.unwrap_or(ProbeConfig::default().epochs),
            ..ProbeConfig::default()
        },
        probe_optim: OptimConfig::default(),
    };
    base.validate()?;
    let axes = if a.paper_grid {
        GridAxes::paper()
    } else {
        GridAxes {
            views: a.views.unwrap_or_default(),
            crops: a.crops.unwrap_or_default(),
            overlaps: a.overlaps.unwrap_or_default(),
            epochs: a.epochs.unwrap_or_default(),
            batches: a.batches.unwrap_or_default(),
            losses: a.losses.unwrap_or_default(),
            seeds: a.seeds.unwrap_or_default(),
        }
    };
    let total = axes.num_runs();
    if a.paper_grid && !a.yes && !confirm(&format!("--paper-grid expands to {total} runs. Continue?")) {
        return Err(Error::Config("grid not confirmed".into()));
    }
    let workers = a.workers.unwrap_or(1);
    eprintln!("running {total} runs with {workers} worker(s) into {}", root.display());
    let progress = |done: usize, total: usize, r: &harness::RunRecord| {
        let summary = match (&r.test, &r.error) {
            (Some(t), _) => format!("ok  auroc {:.3}  f1 {:.3}", t.auroc, t.f1),
            (None, Some(e)) => format!("error: {e}"),
            (None, None) => "error".into(),
        };
        eprintln!("[{done}/{total}] {}/{} seed {}: {summary}", r.tag, r.config_hash, r.seed);
    };
    let outcome = harness::run_grid(&root, &base, &axes, workers, &progress)?;
    if outcome.skipped > 0 {
        eprintln!("reused {} completed runs", outcome.skipped);
    }
    let failed = outcome.records.iter().filter(|r| !r.is_ok()).count();
    println!("{}", root.join("index.csv").display());
    println!("{}", root.join("aggregate.csv").display());
    println!("{}", root.join("wall_clock.csv").display());
    if failed > 0 {
        eprintln!("{failed} of {} runs failed; see their records", outcome.records.len());
    }
    Ok(ExitCode::SUCCESS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use polywin_core::encoder::EncoderConfig;

    #[test]
    fn flags_override_file_values() {
        let cli = Cli::try_parse_from(["polywin", "pretrain", "--views", "8"]).unwrap();
        let Command::Pretrain(mut a) = cli.command else { panic!() };
        let mut f: PretrainArgs = toml::from_str("views = 4\nbatch = 16\n").unwrap();
        fill!(a, f; views, batch);
        assert_eq!((a.views, a.batch), (Some(8), Some(16)));
    }

    #[test]
    fn unknown_file_keys_rejected() {
        assert!(toml::from_str::<FileConfig>("[pretrain]\nwindows = 3\n").is_err());
        assert!(toml::from_str::<FileConfig>("[grid]\nviews = [2, 4]\npaper-grid = false\n").is_ok());
    }

    #[test]
    fn paper_row_config_echo() {
        let cli = Cli::try_parse_from([
            "polywin", "pretrain", "--views", "8", "--crop", "64", "--overlap", "0.5", "--epochs", "32", "--batch",
            "256", "--loss", "geometric", "--preset", "resnet18-1d-512/128",
        ])
        .unwrap();
        let Command::Pretrain(a) = cli.command else { panic!() };
        let cfg = build_pretrain_config(&a, 12).unwrap();
        let row = harness::paper_row("table1-row4").unwrap();
        let mut expected = cfg.clone();
        row.apply(&mut expected);
        assert_eq!(cfg, expected);
        assert_eq!(cfg.encoder, EncoderConfig::preset("resnet18-1d-512/128", 12).unwrap());
    }
}
