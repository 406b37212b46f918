//! Self-supervised pre-training loop.
//!
//! Every epoch shuffles the training records, groups them into batches of `N`
//! (a trailing partial batch is dropped), samples `M` fresh windows per record,
//! encodes all `NM` crops and takes one AdamW step on the poly-window loss.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::encoder::{Encoder, EncoderConfig, Mode, SignalBatch};
use crate::error::{ensure, Error, Result};
use crate::loss::{self, LossKind};
use crate::optim::{self, AdamState, OptimConfig};
use crate::rng::stream_rng;
use crate::sampler::{self, CropConfig, Placement};

const STREAM_SHUFFLE: u64 = 1;
const STREAM_CROPS: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub crop: CropConfig,
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub optim: OptimConfig,
    pub loss_kind: LossKind,
    pub tau: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl PretrainConfig {
    /// Defaults around a named encoder preset.
    pub fn with_preset(preset: &str, channels: usize) -> Result<Self> {
        Ok(PretrainConfig {
            crop: CropConfig::default(),
            encoder: EncoderConfig::preset(preset, channels)?,
            optim: OptimConfig::default(),
            loss_kind: LossKind::Geometric,
            tau: loss::DEFAULT_TAU,
            batch_size: 32,
            epochs: 10,
            seed: 0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.crop.validate()?;
        self.encoder.validate()?;
        ensure!(self.batch_size >= 2, Config, "batch size must be >= 2, got {}", self.batch_size);
        ensure!(self.epochs >= 1, Config, "epochs must be >= 1");
        ensure!(self.tau > 0.0 && self.tau.is_finite(), Config, "temperature must be positive, got {}", self.tau);
        ensure!(
            self.crop.crop_len >= self.encoder.min_input_len(),
            Config,
            "crop length {} is shorter than the encoder's minimum input length {}",
            self.crop.crop_len,
            self.encoder.min_input_len()
        );
        Ok(())
    }

    /// Optimizer updates in one epoch over `records` training records.
    pub fn steps_per_epoch(&self, records: usize) -> usize {
        records / self.batch_size
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStat {
    pub epoch: usize,
    pub mean_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct PretrainResult {
    pub encoder: Encoder,
    pub trace: Vec<EpochStat>,
    pub total_seconds: f64,
    pub steps: usize,
    pub warnings: Vec<String>,
}

/// Runs pre-training on `train` without observing epochs.
pub fn pretrain(train: &Dataset, cfg: &PretrainConfig) -> Result<PretrainResult> {
    pretrain_observed(train, cfg, |_, _| Ok(()))
}

/// Runs pre-training and calls `observer` after every epoch with that epoch's
/// statistics and the current encoder. Observer time is not counted in the
/// epoch's wall clock.
pub fn pretrain_observed(
    train: &Dataset,
    cfg: &PretrainConfig,
    mut observer: impl FnMut(&EpochStat, &Encoder) -> Result<()>,
) -> Result<PretrainResult> {
    cfg.validate()?;
    ensure!(!train.is_empty(), Data, "training split is empty");
    ensure!(
        train.channels() == cfg.encoder.in_channels,
        Config,
        "dataset has {} channels but the encoder expects {}",
        train.channels(),
        cfg.encoder.in_channels
    );
    let t = train.timepoints();
    ensure!(
        cfg.crop.crop_len <= t,
        Config,
        "crop length {} exceeds record length {t}",
        cfg.crop.crop_len
    );
    let steps_per_epoch = cfg.steps_per_epoch(train.len());
    ensure!(
        steps_per_epoch >= 1,
        Config,
        "{} training records cannot fill one batch of {}",
        train.len(),
        cfg.batch_size
    );
    let total_steps = steps_per_epoch * cfg.epochs;
    let sched = cfg.optim.for_total_steps(total_steps);
    sched.validate()?;

    let (n, m, len, c) = (cfg.batch_size, cfg.crop.num_windows, cfg.crop.crop_len, train.channels());
    let mask = loss::build_mask(n, m)?;
    let mut encoder = Encoder::new(cfg.encoder.clone(), cfg.seed)?;
    let mut state = AdamState::new(encoder.params());
    let mut shuffle_rng = stream_rng(cfg.seed, STREAM_SHUFFLE);
    let mut crop_rng = stream_rng(cfg.seed, STREAM_CROPS);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut warnings = Vec::new();
    let (mut infeasible, mut fallback) = (0usize, 0usize);
    let mut global = 0usize;
    let mut total_seconds = 0.0;
    let mut buf = Vec::with_capacity(n * m * c * len);

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks_exact(n) {
            buf.clear();
            for &r in batch {
                let sampled = sampler::sample_windows(&mut crop_rng, t, &cfg.crop)?;
                match sampled.placement {
                    Placement::Infeasible => infeasible += 1,
                    Placement::StratifiedFallback => fallback += 1,
                    Placement::Rejection => {}
                }
                sampler::extract_into(&train.records[r], &sampled.windows, len, &mut buf)?;
            }
            let x = SignalBatch::new(n * m, c, len, std::mem::take(&mut buf))?;
            let pass = encoder.forward(&x, Mode::Train)?;
            buf = x.data;
            let sim = loss::similarity(&pass.embeddings.rows, cfg.tau)?;
            let out = loss::loss(cfg.loss_kind, &sim, &mask)?;
            if !out.value.is_finite() || out.grad_z.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric(diagnostics(epoch, global, out.value, &sim.s, &out.grad_z)));
            }
            let grads = encoder.backward(&pass, &out.grad_z)?;
            encoder.commit_running_stats(pass.feature_cache());
            let lr = optim::lr_at(global, &sched)?;
            optim::step(encoder.params_mut(), &grads.params, &mut state, &sched, lr).map_err(|e| match e {
                Error::Numeric(msg) => Error::Numeric(format!(
                    "{msg}; {}",
                    diagnostics(epoch, global, out.value, &sim.s, &out.grad_z)
                )),
                other => other,
            })?;
            loss_sum += out.value;
            global += 1;
        }
        let seconds = started.elapsed().as_secs_f64();
        total_seconds += seconds;
        let stat = EpochStat {
            epoch,
            mean_loss: loss_sum / steps_per_epoch as f64,
            seconds,
        };
        log::info!("epoch {epoch}/{}: loss {:.5} ({seconds:.2}s)", cfg.epochs, stat.mean_loss);
        observer(&stat, &encoder)?;
        trace.push(stat);
    }
    if infeasible > 0 {
        warnings.push(format!(
            "{infeasible} window sets used even spacing because the overlap cap could not be met"
        ));
    }
    if fallback > 0 {
        warnings.push(format!("{fallback} window sets used the stratified fallback after rejection failed"));
    }
    Ok(PretrainResult {
        encoder,
        trace,
        total_seconds,
        steps: global,
        warnings,
    })
}

fn diagnostics(epoch: usize, step: usize, value: f64, s: &Array2<f64>, grad: &Array2<f64>) -> String {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for ((i, j), &v) in s.indexed_iter() {
        if i != j {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let mut msg = format!("non-finite loss state at epoch {epoch}, step {step}: loss {value}");
    let _ = write!(msg, ", off-diagonal S in [{lo}, {hi}], |dL/dZ| {gnorm}");
    msg
}

/// Eval-mode pooled features of every record at full length, in chunks of
/// `chunk` records.
pub fn extract_features(encoder: &Encoder, dataset: &Dataset, chunk: usize) -> Result<Array2<f64>> {
    let d = encoder.config().embed_dim;
    if dataset.is_empty() {
        return Ok(Array2::zeros((0, d)));
    }
    let (c, t) = (dataset.channels(), dataset.timepoints());
    let mut out = Array2::zeros((dataset.len(), d));
    for (i, group) in dataset.records.chunks(chunk.max(1)).enumerate() {
        let data: Vec<f64> = group
            .iter()
            .flat_map(|r| r.signal.iter().map(|&v| f64::from(v)))
            .collect();
        let x = SignalBatch::new(group.len(), c, t, data)?;
        let f = encoder.features(&x)?;
        let start = i * chunk.max(1);
        out.slice_mut(ndarray::s![start..start + group.len(), ..]).assign(&f);
    }
    Ok(out)
}

/// Labels of `dataset` as a records x classes 0/1 matrix.
pub fn label_targets(dataset: &Dataset) -> Array2<u8> {
    dataset.label_matrix().mapv(|v| v as u8)
}

pub const LOSS_TRACE_HEADER: &str = "epoch,mean_loss,seconds";

pub fn loss_trace_csv(trace: &[EpochStat]) -> String {
    let mut s = String::from(LOSS_TRACE_HEADER);
    s.push('\n');
    for e in trace {
        let _ = writeln!(s, "{},{},{}", e.epoch, e.mean_loss, e.seconds);
    }
    s
}

pub fn write_loss_trace(trace: &[EpochStat], path: &Path) -> Result<()> {
    std::fs::write(path, loss_trace_csv(trace))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use crate::encoder::PRESET_TINY;

    fn small_data(records: usize) -> Dataset {
        generate_synthetic(&SyntheticSpec {
            num_records: records,
            channels: 2,
            timepoints: 128,
            num_classes: 3,
            ..Default::default()
        })
        .unwrap()
    }

    fn small_cfg(n: usize, m: usize, epochs: usize) -> PretrainConfig {
        let mut cfg = PretrainConfig::with_preset(PRESET_TINY, 2).unwrap();
        cfg.batch_size = n;
        cfg.crop = CropConfig {
            num_windows: m,
            crop_len: 32,
            max_overlap: 0.5,
            ..Default::default()
        };
        cfg.epochs = epochs;
        cfg.seed = 3;
        cfg
    }

    #[test]
    fn one_epoch_takes_floor_steps() {
        let data = small_data(70);
        let r = pretrain(&data, &small_cfg(16, 2, 1)).unwrap();
        assert_eq!(r.steps, 4);
        assert_eq!(r.trace.len(), 1);
        assert!(r.trace[0].mean_loss.is_finite());
    }

    #[test]
    fn same_seed_same_trace() {
        let data = small_data(40);
        let a = pretrain(&data, &small_cfg(8, 3, 2)).unwrap();
        let b = pretrain(&data, &small_cfg(8, 3, 2)).unwrap();
        let la: Vec<f64> = a.trace.iter().map(|e| e.mean_loss).collect();
        let lb: Vec<f64> = b.trace.iter().map(|e| e.mean_loss).collect();
        assert_eq!(la, lb);
        assert_eq!(a.encoder.params(), b.encoder.params());
    }

    #[test]
    fn rejects_bad_configs() {
        let data = small_data(20);
        let mut cfg = small_cfg(8, 2, 1);
        cfg.epochs = 0;
        assert!(pretrain(&data, &cfg).is_err());
        let mut cfg = small_cfg(8, 2, 1);
        cfg.batch_size = 1;
        assert!(pretrain(&data, &cfg).is_err());
        assert!(pretrain(&data, &small_cfg(32, 2, 1)).is_err());
        let mut cfg = small_cfg(8, 2, 1);
        cfg.crop.crop_len = 200;
        assert!(pretrain(&data, &cfg).is_err());
        let mut cfg = small_cfg(8, 2, 1);
        cfg.encoder = EncoderConfig::preset(PRESET_TINY, 3).unwrap();
        assert!(pretrain(&data, &cfg).is_err());
    }

    #[test]
    fn infeasible_crops_warn_but_train() {
        let data = small_data(16);
        let mut cfg = small_cfg(8, 8, 1);
        cfg.crop.crop_len = 64;
        cfg.crop.max_overlap = 0.0;
        let r = pretrain(&data, &cfg).unwrap();
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn observer_sees_every_epoch() {
        let data = small_data(24);
        let mut seen = Vec::new();
        pretrain_observed(&data, &small_cfg(8, 2, 3), |s, _| {
            seen.push(s.epoch);
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![1, 2, 3]);
    }

    #[test]
    fn features_cover_every_record() {
        let data = small_data(10);
        let enc = Encoder::new(EncoderConfig::preset(PRESET_TINY, 2).unwrap(), 1).unwrap();
        let f = extract_features(&enc, &data, 3).unwrap();
        assert_eq!(f.dim(), (10, 64));
        let whole = extract_features(&enc, &data, 10).unwrap();
        assert!((&f - &whole).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn trace_csv_layout() {
        let csv = loss_trace_csv(&[EpochStat { epoch: 1, mean_loss: 2.5, seconds: 0.25 }]);
        assert_eq!(csv, "epoch,mean_loss,seconds\n1,2.5,0.25\n");
    }
}
