//! Experiment runs and grids.
//!
//! One experiment is pre-training, frozen feature extraction on full-length
//! records, probe fitting with validation-F1 selection, and a single test
//! evaluation. Each run is persisted as its own file at
//! `runs/<tag>/<config-hash>/<seed>.record`; `index.csv` is rebuilt from those
//! files, so every table here can be regenerated from disk alone.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{self, Dataset, SyntheticSpec};
use crate::encoder::Encoder;
use crate::error::{ensure, Error, Result};
use crate::eval::{self, aggregate_seeds, MetricReport, ProbeConfig};
use crate::loss::LossKind;
use crate::optim::OptimConfig;
use crate::pretrain::{self, EpochStat, PretrainConfig};

/// Records per encoder call when extracting features.
const FEATURE_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Path(PathBuf),
    Synthetic(SyntheticSpec),
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::Path(dir) => data::load_dataset_dir(dir),
            DataSource::Synthetic(spec) => data::generate_synthetic(spec),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub tag: String,
    pub data: DataSource,
    pub pretrain: PretrainConfig,
    pub probe: ProbeConfig,
    #[serde(default)]
    pub probe_optim: OptimConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            !self.tag.is_empty()
                && self
                    .tag
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.')),
            Config,
            "tag {:?} must be non-empty and use only letters, digits, '-', '_' or '.'",
            self.tag
        );
        self.pretrain.validate()?;
        self.probe.validate()?;
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.pretrain.seed
    }

    /// Hash of everything except the seeds, so repeats of one configuration
    /// share a directory.
    pub fn config_hash(&self) -> String {
        let mut unseeded = self.clone();
        unseeded.pretrain.seed = 0;
        unseeded.probe.seed = 0;
        let json = serde_json::to_vec(&unseeded).expect("config serializes");
        hex::encode(Sha256::digest(&json))[..16].to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub tag: String,
    pub config_hash: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub validation: Option<MetricReport>,
    pub test: Option<MetricReport>,
    pub best_probe_epoch: Option<usize>,
    pub loss_trace: Vec<EpochStat>,
    pub pretrain_seconds: f64,
    pub feature_seconds: f64,
    pub probe_seconds: f64,
    pub timestamp: u64,
    pub machine: String,
    pub warnings: Vec<String>,
}

impl RunRecord {
    pub fn is_ok(&self) -> bool {
        self.status == RunStatus::Ok
    }

    fn empty(cfg: &ExperimentConfig) -> Self {
        RunRecord {
            status: RunStatus::Error,
            error: None,
            tag: cfg.tag.clone(),
            config_hash: cfg.config_hash(),
            seed: cfg.seed(),
            config: cfg.clone(),
            validation: None,
            test: None,
            best_probe_epoch: None,
            loss_trace: Vec::new(),
            pretrain_seconds: 0.0,
            feature_seconds: 0.0,
            probe_seconds: 0.0,
            timestamp: now_unix(),
            machine: machine_descriptor(),
            warnings: Vec::new(),
        }
    }

    fn failed(cfg: &ExperimentConfig, err: &Error) -> Self {
        RunRecord {
            error: Some(err.to_string()),
            ..RunRecord::empty(cfg)
        }
    }
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// OS, architecture and available parallelism.
pub fn machine_descriptor() -> String {
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    format!("{}-{} ({threads} threads)", std::env::consts::OS, std::env::consts::ARCH)
}

/// Validation and test metrics of a probe fitted on frozen features.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeOutcome {
    pub validation: MetricReport,
    pub test: MetricReport,
    pub best_epoch: usize,
    pub feature_seconds: f64,
    pub probe_seconds: f64,
}

/// Extracts full-length features for the three splits, fits the probe on
/// train with validation selection, then scores test once.
pub fn evaluate_encoder(
    encoder: &Encoder,
    splits: (&Dataset, &Dataset, &Dataset),
    probe: &ProbeConfig,
    probe_optim: &OptimConfig,
) -> Result<ProbeOutcome> {
    let (train, val, test) = splits;
    ensure!(
        train.channels() == encoder.config().in_channels,
        Config,
        "dataset has {} channels but the encoder expects {}",
        train.channels(),
        encoder.config().in_channels
    );
    ensure!(!test.is_empty(), Data, "test split is empty");
    let started = Instant::now();
    let fx = |d: &Dataset| pretrain::extract_features(encoder, d, FEATURE_CHUNK);
    let (tx, vx, sx) = (fx(train)?, fx(val)?, fx(test)?);
    let feature_seconds = started.elapsed().as_secs_f64();
    let started = Instant::now();
    let (ty, vy, sy) = (
        pretrain::label_targets(train),
        pretrain::label_targets(val),
        pretrain::label_targets(test),
    );
    let fitted = eval::train_probe(&tx, &ty, &vx, &vy, probe, probe_optim)?;
    let names = &train.class_names;
    let validation = eval::metric_report(&fitted.predict_proba(&vx), &vy, probe.threshold, names)?;
    let test = eval::metric_report(&fitted.predict_proba(&sx), &sy, probe.threshold, names)?;
    Ok(ProbeOutcome {
        validation,
        test,
        best_epoch: fitted.best_epoch,
        feature_seconds,
        probe_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Runs one experiment on an already loaded dataset. Failures become error
/// records rather than errors.
pub fn run_experiment_on(cfg: &ExperimentConfig, dataset: &Dataset) -> RunRecord {
    match try_run(cfg, dataset) {
        Ok(r) => r,
        Err(e) => {
            log::warn!("run {} seed {} failed: {e}", cfg.config_hash(), cfg.seed());
            RunRecord::failed(cfg, &e)
        }
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> RunRecord {
    match cfg.data.load() {
        Ok(d) => run_experiment_on(cfg, &d),
        Err(e) => RunRecord::failed(cfg, &e),
    }
}

fn try_run(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<RunRecord> {
    cfg.validate()?;
    let (train, val, test) = data::split(dataset)?;
    let pre = pretrain::pretrain(&train, &cfg.pretrain)?;
    let outcome = evaluate_encoder(&pre.encoder, (&train, &val, &test), &cfg.probe, &cfg.probe_optim)?;
    Ok(RunRecord {
        status: RunStatus::Ok,
        validation: Some(outcome.validation),
        test: Some(outcome.test),
        best_probe_epoch: Some(outcome.best_epoch),
        loss_trace: pre.trace,
        pretrain_seconds: pre.total_seconds,
        feature_seconds: outcome.feature_seconds,
        probe_seconds: outcome.probe_seconds,
        warnings: pre.warnings,
        ..RunRecord::empty(cfg)
    })
}

pub fn record_path(root: &Path, tag: &str, config_hash: &str, seed: u64) -> PathBuf {
    root.join("runs").join(tag).join(config_hash).join(format!("{seed}.record"))
}

/// Writes a record through a temporary file and rename.
pub fn write_record(root: &Path, rec: &RunRecord) -> Result<PathBuf> {
    let path = record_path(root, &rec.tag, &rec.config_hash, rec.seed);
    let dir = path.parent().expect("record path has a parent");
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(".{}.tmp", rec.seed));
    let mut text = serde_json::to_string_pretty(rec)?;
    text.push('\n');
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, &path)?;
    Ok(path)
}

pub fn read_record(path: &Path) -> Result<RunRecord> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Every record under `root/runs`, sorted by tag, hash and seed.
pub fn load_records(root: &Path) -> Result<Vec<RunRecord>> {
    let mut out = Vec::new();
    let runs = root.join("runs");
    if !runs.exists() {
        return Ok(out);
    }
    let mut stack = vec![runs];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "record") {
                out.push(read_record(&path)?);
            }
        }
    }
    out.sort_by(|a, b| (&a.tag, &a.config_hash, a.seed).cmp(&(&b.tag, &b.config_hash, b.seed)));
    Ok(out)
}

pub const INDEX_HEADER: &str =
    "tag,views,crop,overlap,epochs,batch,loss,seed,f1,auroc,recall,precision,pretrain_seconds";

fn metric_cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// One row per record; metrics are the test metrics, blank for failed runs.
pub fn index_csv(records: &[RunRecord]) -> String {
    let mut s = format!("{INDEX_HEADER}\n");
    for r in records {
        let p = &r.config.pretrain;
        let t = r.test.as_ref();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{:.3}",
            r.tag,
            p.crop.num_windows,
            p.crop.crop_len,
            p.crop.max_overlap,
            p.epochs,
            p.batch_size,
            p.loss_kind,
            r.seed,
            metric_cell(t.map(|m| m.f1)),
            metric_cell(t.map(|m| m.auroc)),
            metric_cell(t.map(|m| m.recall)),
            metric_cell(t.map(|m| m.precision)),
            r.pretrain_seconds
        );
    }
    s
}

/// Rewrites `root/index.csv` from the records on disk.
pub fn rebuild_index(root: &Path) -> Result<PathBuf> {
    let records = load_records(root)?;
    let path = root.join("index.csv");
    std::fs::write(&path, index_csv(&records))?;
    Ok(path)
}

/// Mean over seeds, with a 95% interval when at least two seeds succeeded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricAgg {
    pub mean: f64,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub n: usize,
}

fn agg(values: &[f64]) -> Option<MetricAgg> {
    match values.len() {
        0 => None,
        1 => Some(MetricAgg {
            mean: values[0],
            ci_low: None,
            ci_high: None,
            n: 1,
        }),
        n => {
            let s = aggregate_seeds(values).ok()?;
            Some(MetricAgg {
                mean: s.mean,
                ci_low: Some(s.ci_low),
                ci_high: Some(s.ci_high),
                n,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub tag: String,
    pub config_hash: String,
    pub views: usize,
    pub crop: usize,
    pub overlap: f64,
    pub epochs: usize,
    pub batch: usize,
    pub loss: LossKind,
    pub completed: usize,
    pub failed: usize,
    pub f1: Option<MetricAgg>,
    pub auroc: Option<MetricAgg>,
    pub recall: Option<MetricAgg>,
    pub precision: Option<MetricAgg>,
    pub val_auroc: Option<MetricAgg>,
    pub pretrain_seconds: Option<MetricAgg>,
}

/// Groups records by tag and configuration hash and aggregates test metrics
/// over the successful seeds.
pub fn aggregate_table(records: &[RunRecord]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(String, String), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.tag.clone(), r.config_hash.clone())).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((tag, config_hash), rs)| {
            let ok: Vec<&&RunRecord> = rs.iter().filter(|r| r.is_ok()).collect();
            let pick = |f: &dyn Fn(&RunRecord) -> Option<f64>| -> Option<MetricAgg> {
                agg(&ok.iter().filter_map(|r| f(r)).collect::<Vec<_>>())
            };
            let p = &rs[0].config.pretrain;
            AggregateRow {
                tag,
                config_hash,
                views: p.crop.num_windows,
                crop: p.crop.crop_len,
                overlap: p.crop.max_overlap,
                epochs: p.epochs,
                batch: p.batch_size,
                loss: p.loss_kind,
                completed: ok.len(),
                failed: rs.len() - ok.len(),
                f1: pick(&|r| r.test.as_ref().map(|m| m.f1)),
                auroc: pick(&|r| r.test.as_ref().map(|m| m.auroc)),
                recall: pick(&|r| r.test.as_ref().map(|m| m.recall)),
                precision: pick(&|r| r.test.as_ref().map(|m| m.precision)),
                val_auroc: pick(&|r| r.validation.as_ref().map(|m| m.auroc)),
                pretrain_seconds: pick(&|r| Some(r.pretrain_seconds)),
            }
        })
        .collect()
}

fn agg_cells(a: &Option<MetricAgg>) -> String {
    match a {
        Some(m) => format!(
            "{:.6},{},{}",
            m.mean,
            metric_cell(m.ci_low),
            metric_cell(m.ci_high)
        ),
        None => ",,".into(),
    }
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut s = String::from(
        "tag,config_hash,views,crop,overlap,epochs,batch,loss,completed,failed,\
         f1,f1_low,f1_high,auroc,auroc_low,auroc_high,recall,recall_low,recall_high,\
         precision,precision_low,precision_high,pretrain_seconds,pretrain_seconds_low,pretrain_seconds_high\n",
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.tag,
            r.config_hash,
            r.views,
            r.crop,
            r.overlap,
            r.epochs,
            r.batch,
            r.loss,
            r.completed,
            r.failed,
            agg_cells(&r.f1),
            agg_cells(&r.auroc),
            agg_cells(&r.recall),
            agg_cells(&r.precision),
            agg_cells(&r.pretrain_seconds)
        );
    }
    s
}

/// Pre-training wall clock by number of views and epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallClockRow {
    pub views: usize,
    pub epochs: usize,
    pub seconds: MetricAgg,
    pub seconds_per_epoch: f64,
}

pub fn wall_clock_table(records: &[RunRecord]) -> Vec<WallClockRow> {
    let mut groups: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.is_ok()) {
        let p = &r.config.pretrain;
        groups.entry((p.crop.num_windows, p.epochs)).or_default().push(r.pretrain_seconds);
    }
    groups
        .into_iter()
        .filter_map(|((views, epochs), secs)| {
            let seconds = agg(&secs)?;
            Some(WallClockRow {
                views,
                epochs,
                seconds_per_epoch: seconds.mean / epochs as f64,
                seconds,
            })
        })
        .collect()
}

pub fn wall_clock_csv(rows: &[WallClockRow]) -> String {
    let mut s = String::from("views,epochs,seconds,seconds_low,seconds_high,seconds_per_epoch,runs\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{:.6},{}",
            r.views,
            r.epochs,
            agg_cells(&Some(r.seconds)),
            r.seconds_per_epoch,
            r.seconds.n
        );
    }
    s
}

/// Value lists for each grid axis. An empty list keeps the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridAxes {
    pub views: Vec<usize>,
    pub crops: Vec<usize>,
    pub overlaps: Vec<f64>,
    pub epochs: Vec<usize>,
    pub batches: Vec<usize>,
    pub losses: Vec<LossKind>,
    pub seeds: Vec<u64>,
}

impl GridAxes {
    /// The full ablation grid of the original study.
    pub fn paper() -> Self {
        GridAxes {
            views: vec![2, 4, 6, 8],
            crops: vec![32, 64, 128, 256],
            overlaps: vec![0.0, 0.25, 0.5, 0.75],
            epochs: vec![16, 32, 64, 128, 256],
            batches: vec![256, 512, 768, 1024],
            losses: vec![LossKind::Geometric, LossKind::Arithmetic],
            seeds: vec![0, 42, 123, 555, 789],
        }
    }

    pub fn num_runs(&self) -> usize {
        [
            self.views.len(),
            self.crops.len(),
            self.overlaps.len(),
            self.epochs.len(),
            self.batches.len(),
            self.losses.len(),
            self.seeds.len(),
        ]
        .iter()
        .map(|&n| n.max(1))
        .product()
    }
}

fn or_base<T: Clone>(axis: &[T], base: T) -> Vec<T> {
    if axis.is_empty() {
        vec![base]
    } else {
        axis.to_vec()
    }
}

/// Cartesian product of the axes applied to `base`, seeds innermost.
pub fn expand_grid(base: &ExperimentConfig, axes: &GridAxes) -> Vec<ExperimentConfig> {
    let p = &base.pretrain;
    let mut out = Vec::with_capacity(axes.num_runs());
    for &views in &or_base(&axes.views, p.crop.num_windows) {
        for &crop in &or_base(&axes.crops, p.crop.crop_len) {
            for &overlap in &or_base(&axes.overlaps, p.crop.max_overlap) {
                for &epochs in &or_base(&axes.epochs, p.epochs) {
                    for &batch in &or_base(&axes.batches, p.batch_size) {
                        for &loss in &or_base(&axes.losses, p.loss_kind) {
                            for &seed in &or_base(&axes.seeds, p.seed) {
                                let mut c = base.clone();
                                c.pretrain.crop.num_windows = views;
                                c.pretrain.crop.crop_len = crop;
                                c.pretrain.crop.max_overlap = overlap;
                                c.pretrain.epochs = epochs;
                                c.pretrain.batch_size = batch;
                                c.pretrain.loss_kind = loss;
                                c.pretrain.seed = seed;
                                c.probe.seed = seed;
                                out.push(c);
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub records: Vec<RunRecord>,
    /// Runs whose successful record already existed and were not rerun.
    pub skipped: usize,
    pub aggregate: Vec<AggregateRow>,
    pub wall_clock: Vec<WallClockRow>,
}

/// Runs every configuration of the grid with up to `workers` threads,
/// persisting each record as it completes. Existing successful records are
/// reused; error records are retried. `progress` is called once per run.
pub fn run_grid(
    root: &Path,
    base: &ExperimentConfig,
    axes: &GridAxes,
    workers: usize,
    progress: &(dyn Fn(usize, usize, &RunRecord) + Sync),
) -> Result<GridOutcome> {
    let jobs = expand_grid(base, axes);
    ensure!(!jobs.is_empty(), Config, "grid is empty");
    let total = jobs.len();
    let mut slots: Vec<Option<RunRecord>> = vec![None; total];
    let mut pending = Vec::new();
    for (i, job) in jobs.iter().enumerate() {
        let path = record_path(root, &job.tag, &job.config_hash(), job.seed());
        match path.exists().then(|| read_record(&path)) {
            Some(Ok(r)) if r.is_ok() => slots[i] = Some(r),
            _ => pending.push(i),
        }
    }
    let skipped = total - pending.len();

    let mut datasets: HashMap<String, Arc<Result<Dataset>>> = HashMap::new();
    for &i in &pending {
        let key = serde_json::to_string(&jobs[i].data)?;
        datasets
            .entry(key)
            .or_insert_with(|| Arc::new(jobs[i].data.load()));
    }

    let next = AtomicUsize::new(0);
    let done = AtomicUsize::new(skipped);
    let results = Mutex::new(Vec::with_capacity(pending.len()));
    let write_error = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, pending.len().max(1)) {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(&i) = pending.get(k) else { break };
                let job = &jobs[i];
                let key = serde_json::to_string(&job.data).expect("data source serializes");
                let rec = match datasets[&key].as_ref() {
                    Ok(d) => run_experiment_on(job, d),
                    Err(e) => RunRecord::failed(job, e),
                };
                if let Err(e) = write_record(root, &rec) {
                    write_error.lock().expect("lock").get_or_insert(e);
                }
                let n = done.fetch_add(1, Ordering::SeqCst) + 1;
                progress(n, total, &rec);
                results.lock().expect("lock").push((i, rec));
            });
        }
    });
    if let Some(e) = write_error.into_inner().expect("lock") {
        return Err(e);
    }
    for (i, rec) in results.into_inner().expect("lock") {
        slots[i] = Some(rec);
    }
    let records: Vec<RunRecord> = slots.into_iter().map(|r| r.expect("every slot filled")).collect();
    rebuild_index(root)?;
    let aggregate = aggregate_table(&records);
    let wall_clock = wall_clock_table(&records);
    std::fs::write(root.join("aggregate.csv"), aggregate_csv(&aggregate))?;
    std::fs::write(root.join("wall_clock.csv"), wall_clock_csv(&wall_clock))?;
    Ok(GridOutcome {
        records,
        skipped,
        aggregate,
        wall_clock,
    })
}

/// One row of the original study's results table: the pre-training settings
/// that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PaperRow {
    pub name: &'static str,
    pub views: usize,
    pub batch: usize,
    pub loss: LossKind,
    pub crop: usize,
    pub overlap: f64,
    pub epochs: usize,
}

pub const PAPER_ROWS: [PaperRow; 4] = [
    PaperRow { name: "table1-row1", views: 2, batch: 256, loss: LossKind::Geometric, crop: 64, overlap: 0.0, epochs: 128 },
    PaperRow { name: "table1-row2", views: 4, batch: 768, loss: LossKind::Geometric, crop: 64, overlap: 0.5, epochs: 64 },
    PaperRow { name: "table1-row3", views: 6, batch: 256, loss: LossKind::Geometric, crop: 64, overlap: 0.75, epochs: 32 },
    PaperRow { name: "table1-row4", views: 8, batch: 256, loss: LossKind::Geometric, crop: 64, overlap: 0.5, epochs: 32 },
];

pub fn paper_row(name: &str) -> Result<PaperRow> {
    PAPER_ROWS.iter().find(|r| r.name == name).copied().ok_or_else(|| {
        let names: Vec<&str> = PAPER_ROWS.iter().map(|r| r.name).collect();
        Error::Config(format!("unknown preset {name:?}; known: {}", names.join(", ")))
    })
}

impl PaperRow {
    pub fn apply(&self, cfg: &mut PretrainConfig) {
        cfg.crop.num_windows = self.views;
        cfg.crop.crop_len = self.crop;
        cfg.crop.max_overlap = self.overlap;
        cfg.batch_size = self.batch;
        cfg.loss_kind = self.loss;
        cfg.epochs = self.epochs;
    }
}
