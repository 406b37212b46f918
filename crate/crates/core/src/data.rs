//! Labeled multichannel records, the on-disk dataset format, fold splitting,
//! and a synthetic pulse-train generator.
//!
//! A dataset lives in two files:
//!
//! * a tensor file of raw little-endian `f32` samples, row-major with shape
//!   `(records, channels, timepoints)`;
//! * a JSON sidecar carrying the shape, class names, per-record ids, labels and
//!   folds, plus an optional split rule and normalization flag.
//!
//! [`write_dataset`] emits the sidecar in a canonical layout, so a canonical pair
//! of files survives `load_dataset` followed by `write_dataset` byte for byte.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::rng::stream_rng;

/// File name of the tensor file inside a dataset directory.
pub const SIGNAL_FILE: &str = "signals.f32";
/// File name of the sidecar inside a dataset directory.
pub const META_FILE: &str = "meta.json";

/// One labeled multichannel signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub id: String,
    /// Channels x timepoints.
    pub signal: Array2<f32>,
    /// Multi-hot, one entry per class.
    pub labels: Vec<u8>,
    pub fold: u32,
}

impl Record {
    pub fn channels(&self) -> usize {
        self.signal.nrows()
    }

    pub fn timepoints(&self) -> usize {
        self.signal.ncols()
    }

    fn validate(&self, num_classes: usize) -> Result<()> {
        ensure!(
            self.channels() >= 1 && self.timepoints() >= 1,
            Data,
            "record {} has empty signal",
            self.id
        );
        ensure!(
            self.signal.iter().all(|x| x.is_finite()),
            Data,
            "record {} contains a non-finite sample",
            self.id
        );
        ensure!(
            self.labels.len() == num_classes,
            Data,
            "record {} has {} labels, expected {}",
            self.id,
            self.labels.len(),
            num_classes
        );
        ensure!(
            self.labels.iter().all(|&l| l <= 1),
            Data,
            "record {} has a label outside {{0,1}}",
            self.id
        );
        ensure!(self.fold >= 1, Data, "record {} has fold 0", self.id);
        Ok(())
    }
}

/// Which split a fold belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitKind {
    Train,
    Validation,
    Test,
}

/// Mapping from folds to splits. The default sends folds 1-8 to training,
/// fold 9 to validation and fold 10 to test.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRule {
    pub train: Vec<u32>,
    pub validation: Vec<u32>,
    pub test: Vec<u32>,
}

impl Default for SplitRule {
    fn default() -> Self {
        SplitRule {
            train: (1..=8).collect(),
            validation: vec![9],
            test: vec![10],
        }
    }
}

impl SplitRule {
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for f in self.train.iter().chain(&self.validation).chain(&self.test) {
            ensure!(
                seen.insert(*f),
                Config,
                "fold {f} is assigned to more than one split"
            );
        }
        Ok(())
    }

    pub fn kind_of(&self, fold: u32) -> Option<SplitKind> {
        if self.train.contains(&fold) {
            Some(SplitKind::Train)
        } else if self.validation.contains(&fold) {
            Some(SplitKind::Validation)
        } else if self.test.contains(&fold) {
            Some(SplitKind::Test)
        } else {
            None
        }
    }
}

/// An ordered collection of records sharing channel count, length and classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<Record>,
    pub class_names: Vec<String>,
    /// Split rule declared in the sidecar, if any. [`Dataset::split_rule`]
    /// falls back to the default.
    pub declared_split_rule: Option<SplitRule>,
    /// Normalization flag as declared in the sidecar.
    pub normalize: Option<bool>,
}

impl Dataset {
    /// Builds a dataset, checking every record and the shared shape.
    pub fn new(records: Vec<Record>, class_names: Vec<String>) -> Result<Self> {
        let ds = Dataset {
            records,
            class_names,
            declared_split_rule: None,
            normalize: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.class_names.len();
        ensure!(k >= 1, Data, "dataset declares no classes");
        if let Some(rule) = &self.declared_split_rule {
            rule.validate()?;
        }
        let Some(first) = self.records.first() else {
            return Ok(());
        };
        let (c, t) = first.signal.dim();
        for r in &self.records {
            r.validate(k)?;
            ensure!(
                r.signal.dim() == (c, t),
                Data,
                "record {} has shape {:?}, expected {:?}",
                r.id,
                r.signal.dim(),
                (c, t)
            );
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Channel count, or 0 for an empty dataset.
    pub fn channels(&self) -> usize {
        self.records.first().map_or(0, Record::channels)
    }

    /// Timepoints per record, or 0 for an empty dataset.
    pub fn timepoints(&self) -> usize {
        self.records.first().map_or(0, Record::timepoints)
    }

    pub fn split_rule(&self) -> SplitRule {
        self.declared_split_rule.clone().unwrap_or_default()
    }

    /// Labels as a records x classes matrix of 0.0/1.0.
    pub fn label_matrix(&self) -> Array2<f64> {
        let k = self.num_classes();
        Array2::from_shape_fn((self.len(), k), |(i, j)| f64::from(self.records[i].labels[j]))
    }

    fn with_records(&self, records: Vec<Record>) -> Dataset {
        Dataset {
            records,
            class_names: self.class_names.clone(),
            declared_split_rule: self.declared_split_rule.clone(),
            normalize: self.normalize,
        }
    }
}

/// Partitions the dataset into (train, validation, test) by fold, preserving
/// record order within each part.
pub fn split(dataset: &Dataset) -> Result<(Dataset, Dataset, Dataset)> {
    let rule = dataset.split_rule();
    rule.validate()?;
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for r in &dataset.records {
        match rule.kind_of(r.fold) {
            Some(SplitKind::Train) => train.push(r.clone()),
            Some(SplitKind::Validation) => val.push(r.clone()),
            Some(SplitKind::Test) => test.push(r.clone()),
            None => {
                return Err(Error::Config(format!(
                    "record {} has fold {} which no split covers",
                    r.id, r.fold
                )))
            }
        }
    }
    Ok((
        dataset.with_records(train),
        dataset.with_records(val),
        dataset.with_records(test),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RecordMeta {
    id: String,
    labels: Vec<u8>,
    fold: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Sidecar {
    shape: [usize; 3],
    class_names: Vec<String>,
    records: Vec<RecordMeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split_rule: Option<SplitRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    normalize: Option<bool>,
}

/// Loads a tensor file plus sidecar.
pub fn load_dataset(signal_path: &Path, meta_path: &Path) -> Result<Dataset> {
    let meta_text = fs::read_to_string(meta_path)?;
    let sidecar: Sidecar = serde_json::from_str(&meta_text)
        .map_err(|e| Error::Format(format!("{}: {e}", meta_path.display())))?;
    let bytes = fs::read(signal_path)?;
    let [r, c, t] = sidecar.shape;
    let expected = r
        .checked_mul(c)
        .and_then(|x| x.checked_mul(t))
        .and_then(|x| x.checked_mul(4))
        .ok_or_else(|| Error::Format("declared shape overflows".into()))?;
    ensure!(
        bytes.len() == expected,
        Format,
        "sidecar declares shape ({r}, {c}, {t}) = {expected} bytes, tensor file has {}",
        bytes.len()
    );
    ensure!(
        sidecar.records.len() == r,
        Format,
        "sidecar lists {} records but shape declares {r}",
        sidecar.records.len()
    );
    let k = sidecar.class_names.len();
    let normalize = sidecar.normalize.unwrap_or(false);
    let per_record = c * t;
    let mut records = Vec::with_capacity(r);
    for (i, meta) in sidecar.records.into_iter().enumerate() {
        let start = i * per_record * 4;
        let samples: Vec<f32> = bytes[start..start + per_record * 4]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let mut signal = Array2::from_shape_vec((c, t), samples)
            .map_err(|e| Error::Format(e.to_string()))?;
        let record_check = Record {
            id: meta.id,
            signal,
            labels: meta.labels,
            fold: meta.fold,
        };
        record_check.validate(k)?;
        signal = record_check.signal;
        if normalize {
            zscore_channels(&mut signal);
        }
        records.push(Record {
            signal,
            ..record_check
        });
    }
    let ds = Dataset {
        records,
        class_names: sidecar.class_names,
        declared_split_rule: sidecar.split_rule,
        normalize: sidecar.normalize,
    };
    ds.validate()?;
    Ok(ds)
}

/// Loads `signals.f32` and `meta.json` from a directory.
pub fn load_dataset_dir(dir: &Path) -> Result<Dataset> {
    load_dataset(&dir.join(SIGNAL_FILE), &dir.join(META_FILE))
}

/// Writes the dataset as tensor file plus canonical sidecar.
pub fn write_dataset(dataset: &Dataset, signal_path: &Path, meta_path: &Path) -> Result<()> {
    dataset.validate()?;
    let (c, t) = (dataset.channels(), dataset.timepoints());
    let mut bytes = Vec::with_capacity(dataset.len() * c * t * 4);
    for r in &dataset.records {
        for x in r.signal.iter() {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    let sidecar = Sidecar {
        shape: [dataset.len(), c, t],
        class_names: dataset.class_names.clone(),
        records: dataset
            .records
            .iter()
            .map(|r| RecordMeta {
                id: r.id.clone(),
                labels: r.labels.clone(),
                fold: r.fold,
            })
            .collect(),
        split_rule: dataset.declared_split_rule.clone(),
        normalize: dataset.normalize,
    };
    let mut text = serde_json::to_string_pretty(&sidecar)?;
    text.push('\n');
    fs::write(signal_path, bytes)?;
    fs::write(meta_path, text)?;
    Ok(())
}

/// Writes `signals.f32` and `meta.json` into `dir`, creating it if needed.
pub fn write_dataset_dir(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_dataset(dataset, &dir.join(SIGNAL_FILE), &dir.join(META_FILE))
}

/// Per-channel z-score in place. Constant channels are centered only.
pub fn zscore_channels(signal: &mut Array2<f32>) {
    for mut row in signal.rows_mut() {
        let n = row.len() as f64;
        let mean = row.iter().map(|&x| f64::from(x)).sum::<f64>() / n;
        let var = row
            .iter()
            .map(|&x| (f64::from(x) - mean).powi(2))
            .sum::<f64>()
            / n;
        let std = var.sqrt();
        let scale = if std > 1e-12 { 1.0 / std } else { 1.0 };
        row.mapv_inplace(|x| ((f64::from(x) - mean) * scale) as f32);
    }
}

/// Parameters of the synthetic pulse-train generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_records: usize,
    pub channels: usize,
    pub timepoints: usize,
    pub num_classes: usize,
    /// Inclusive range of pulses per record before class effects.
    pub beat_rate_range: (f64, f64),
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_records: 2000,
            channels: 4,
            timepoints: 500,
            num_classes: 3,
            beat_rate_range: (8.0, 12.0),
            noise_std: 0.1,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.num_records >= 1, Config, "num_records must be >= 1");
        ensure!(self.channels >= 1, Config, "channels must be >= 1");
        ensure!(self.timepoints >= 1, Config, "timepoints must be >= 1");
        ensure!(self.num_classes >= 1, Config, "num_classes must be >= 1");
        let (lo, hi) = self.beat_rate_range;
        ensure!(
            lo >= 1.0 && hi >= lo && hi.is_finite(),
            Config,
            "beat_rate_range must satisfy 1 <= min <= max, got ({lo}, {hi})"
        );
        ensure!(
            self.noise_std >= 0.0 && self.noise_std.is_finite(),
            Config,
            "noise_std must be finite and >= 0"
        );
        Ok(())
    }
}

/// The three morphology effects a class can apply. Class `k` uses effect
/// `k % 3`; classes beyond the first three reuse an effect with larger
/// magnitude and a different channel pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ClassEffect {
    RateShift,
    WidePulse,
    BaselineSegment,
}

impl ClassEffect {
    fn of_class(k: usize) -> Self {
        match k % 3 {
            0 => ClassEffect::RateShift,
            1 => ClassEffect::WidePulse,
            _ => ClassEffect::BaselineSegment,
        }
    }
}

/// Deterministic synthetic dataset. Folds cycle 1..=10 over records so the
/// default split rule yields an 8/1/1 partition.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, 0x5EED_DA7A);
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let (c, t, k) = (spec.channels, spec.timepoints, spec.num_classes);
    let base_width = (0.006 * t as f64).max(1.0);
    // Fixed lead-like gain pattern across channels.
    let channel_gain: Vec<f64> = (0..c).map(|ch| 1.0 + 0.4 * (ch as f64 * 1.3).cos()).collect();

    let mut records = Vec::with_capacity(spec.num_records);
    for i in 0..spec.num_records {
        let labels = loop {
            let l: Vec<u8> = (0..k).map(|_| u8::from(rng.random_bool(0.5))).collect();
            if l.contains(&1) {
                break l;
            }
        };
        let (lo, hi) = spec.beat_rate_range;
        let mut beats = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let mut width = base_width;
        let mut segments: Vec<(f64, usize)> = Vec::new();
        for (class, &on) in labels.iter().enumerate() {
            if on == 0 {
                continue;
            }
            let group = (class / 3) as f64;
            match ClassEffect::of_class(class) {
                ClassEffect::RateShift => beats *= 1.6 + 0.3 * group,
                ClassEffect::WidePulse => width *= 2.2 + 0.6 * group,
                ClassEffect::BaselineSegment => segments.push((0.35 + 0.15 * group, class / 3)),
            }
        }
        let period = t as f64 / beats;
        let phase = rng.random_range(0.0..period);
        let record_gain: Vec<f64> = channel_gain
            .iter()
            .map(|g| g * (1.0 + rng.random_range(-0.15..0.15)))
            .collect();

        let centers: Vec<f64> = {
            let mut v = Vec::new();
            let mut p = phase - period * (1.0 + (4.0 * width / period).ceil());
            while p < t as f64 + 4.0 * width {
                v.push(p.round());
                p += period;
            }
            v
        };

        let mut signal = Array2::<f32>::zeros((c, t));
        for ch in 0..c {
            for ti in 0..t {
                let x = ti as f64;
                let mut v = 0.0;
                for &centre in &centers {
                    let dt = x - centre;
                    if dt.abs() <= 8.0 * width {
                        v += (-dt * dt / (2.0 * width * width)).exp();
                    }
                    // Plateau after each pulse, sign alternating across channels.
                    for &(amp, pattern) in &segments {
                        let lo_edge = centre + 2.0 * width;
                        let hi_edge = centre + 0.4 * period;
                        if x >= lo_edge && x < hi_edge {
                            let sign = if (ch + pattern) % 2 == 0 { 1.0 } else { -1.0 };
                            v += sign * amp;
                        }
                    }
                }
                let n = noise.sample(&mut rng);
                signal[[ch, ti]] = (record_gain[ch] * v + n) as f32;
            }
        }
        records.push(Record {
            id: format!("syn{:06}", i),
            signal,
            labels,
            fold: (i % 10) as u32 + 1,
        });
    }
    let class_names = (0..k)
        .map(|j| match ClassEffect::of_class(j) {
            ClassEffect::RateShift => format!("rate{}", j / 3),
            ClassEffect::WidePulse => format!("wide{}", j / 3),
            ClassEffect::BaselineSegment => format!("segment{}", j / 3),
        })
        .collect();
    Dataset::new(records, class_names)
}
