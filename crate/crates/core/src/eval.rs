//! Linear probe on frozen features, classification metrics and seed
//! aggregation.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{ensure, Error, Result};
use crate::optim::{self, AdamState, OptimConfig};
use crate::tensor::{ParamKind, Tensor};

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-class soft-margin loss averaged over every entry, with its gradient
/// with respect to the logits.
pub fn probe_loss(logits: &Array2<f64>, targets: &Array2<u8>) -> Result<(f64, Array2<f64>)> {
    ensure!(
        logits.dim() == targets.dim(),
        Input,
        "logits {:?} and targets {:?} differ in shape",
        logits.dim(),
        targets.dim()
    );
    ensure!(targets.iter().all(|&y| y <= 1), Input, "targets must be 0 or 1");
    let scale = 1.0 / logits.len().max(1) as f64;
    let mut total = 0.0;
    let mut grad = Array2::zeros(logits.dim());
    for ((idx, &x), &y) in logits.indexed_iter().zip(targets.iter()) {
        total += if y == 1 { softplus(-x) } else { softplus(x) };
        grad[idx] = (sigmoid(x) - f64::from(y)) * scale;
    }
    Ok((total * scale, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub threshold: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            epochs: 90,
            threshold: 0.5,
            batch_size: 256,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.epochs >= 1, Config, "probe epochs must be >= 1");
        ensure!(
            self.threshold > 0.0 && self.threshold < 1.0,
            Config,
            "threshold must lie in (0, 1), got {}",
            self.threshold
        );
        ensure!(self.batch_size >= 1, Config, "probe batch size must be >= 1");
        Ok(())
    }
}

/// A fitted linear classifier together with the feature standardization it
/// was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    /// K x d.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_f1: f64,
    pub val_f1_trace: Vec<f64>,
}

impl LinearProbe {
    pub fn logits(&self, features: &Array2<f64>) -> Array2<f64> {
        let x = (features - &self.mean) / &self.std;
        x.dot(&self.weight.t()) + &self.bias
    }

    /// Sigmoid outputs.
    pub fn predict_proba(&self, features: &Array2<f64>) -> Array2<f64> {
        self.logits(features).mapv(sigmoid)
    }
}

/// Column mean and standard deviation; constant columns get a unit scale.
fn standardizer(x: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let std = x
        .var_axis(Axis(0), 0.0)
        .mapv(|v| if v > 1e-24 { v.sqrt() } else { 1.0 });
    (mean, std)
}

/// Fits a linear multi-label classifier on precomputed features and keeps the
/// epoch with the best validation macro F1 (earliest on ties).
pub fn train_probe(
    train_x: &Array2<f64>,
    train_y: &Array2<u8>,
    val_x: &Array2<f64>,
    val_y: &Array2<u8>,
    cfg: &ProbeConfig,
    optim_cfg: &OptimConfig,
) -> Result<LinearProbe> {
    cfg.validate()?;
    ensure!(train_x.nrows() > 0, Data, "training split is empty");
    ensure!(val_x.nrows() > 0, Data, "validation split is empty");
    ensure!(train_x.nrows() == train_y.nrows(), Input, "train features and labels differ in length");
    ensure!(val_x.nrows() == val_y.nrows(), Input, "validation features and labels differ in length");
    ensure!(
        train_x.ncols() == val_x.ncols() && train_y.ncols() == val_y.ncols(),
        Input,
        "train and validation dimensions disagree"
    );
    let (n, d) = train_x.dim();
    let k = train_y.ncols();
    let (mean, std) = standardizer(train_x);
    let x = (train_x - &mean) / &std;

    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let sched = optim_cfg.for_total_steps(cfg.epochs * steps_per_epoch);
    sched.validate()?;

    let mut params = vec![
        Tensor::zeros("probe.weight", &[k, d], ParamKind::Weight),
        Tensor::zeros("probe.bias", &[k], ParamKind::Bias),
    ];
    let mut state = AdamState::new(&params);
    let mut rng = crate::rng::stream_rng(cfg.seed, 0x9_0BE);
    let mut order: Vec<usize> = (0..n).collect();
    let mut global = 0usize;
    let mut best: Option<LinearProbe> = None;
    let mut trace = Vec::with_capacity(cfg.epochs);

    let snapshot = |params: &[Tensor]| -> (Array2<f64>, Array1<f64>) {
        (
            Array2::from_shape_vec((k, d), params[0].data.clone()).expect("shape"),
            Array1::from_vec(params[1].data.clone()),
        )
    };

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let xb = x.select(Axis(0), chunk);
            let yb = train_y.select(Axis(0), chunk);
            let (w, b) = snapshot(&params);
            let logits = xb.dot(&w.t()) + &b;
            let (_, g) = probe_loss(&logits, &yb)?;
            let gw = g.t().dot(&xb);
            let gb = g.sum_axis(Axis(0));
            let grads = vec![
                Tensor { data: gw.iter().copied().collect(), ..params[0].zeros_like() },
                Tensor { data: gb.to_vec(), ..params[1].zeros_like() },
            ];
            let lr = optim::lr_at(global, &sched)?;
            optim::step(&mut params, &grads, &mut state, &sched, lr)?;
            global += 1;
        }
        let (weight, bias) = snapshot(&params);
        let candidate = LinearProbe {
            weight,
            bias,
            mean: mean.clone(),
            std: std.clone(),
            best_epoch: epoch,
            best_val_f1: 0.0,
            val_f1_trace: Vec::new(),
        };
        let f1 = prf_at_threshold(&candidate.predict_proba(val_x), val_y, cfg.threshold)?.f1;
        trace.push(f1);
        if best.as_ref().is_none_or(|b| f1 > b.best_val_f1) {
            best = Some(LinearProbe { best_val_f1: f1, ..candidate });
        }
    }
    let mut best = best.expect("at least one epoch");
    best.val_f1_trace = trace;
    Ok(best)
}

/// AUROC of one class by the rank statistic with average ranks for ties.
/// `None` when the class lacks positives or negatives.
pub fn auroc_binary(scores: &[f64], targets: &[u8]) -> Option<f64> {
    let pos = targets.iter().filter(|&&y| y == 1).count();
    let neg = targets.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share their average.
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * idx[i..=j].iter().filter(|&&t| targets[t] == 1).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Some(u / (pos * neg) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AurocSummary {
    pub macro_auroc: f64,
    pub per_class: Vec<Option<f64>>,
    /// Classes without both positives and negatives.
    pub excluded: Vec<usize>,
}

fn check_scores(scores: &Array2<f64>, targets: &Array2<u8>) -> Result<()> {
    ensure!(
        scores.dim() == targets.dim(),
        Input,
        "scores {:?} and targets {:?} differ in shape",
        scores.dim(),
        targets.dim()
    );
    ensure!(targets.iter().all(|&y| y <= 1), Input, "targets must be 0 or 1");
    Ok(())
}

pub fn auroc_macro(scores: &Array2<f64>, targets: &Array2<u8>) -> Result<AurocSummary> {
    check_scores(scores, targets)?;
    let per_class: Vec<Option<f64>> = (0..scores.ncols())
        .map(|c| {
            let s = scores.column(c).to_vec();
            let t = targets.column(c).to_vec();
            auroc_binary(&s, &t)
        })
        .collect();
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::Metric("every class lacks positives or negatives; AUROC undefined".into()));
    }
    let excluded = per_class
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_none())
        .map(|(c, _)| c)
        .collect();
    Ok(AurocSummary {
        macro_auroc: defined.iter().sum::<f64>() / defined.len() as f64,
        per_class,
        excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassPrf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// Some ratio had a zero denominator and was set to 0.
    pub zero_division: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrfSummary {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_class: Vec<ClassPrf>,
}

fn ratio(num: usize, den: usize, flag: &mut bool) -> f64 {
    if den == 0 {
        *flag = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Macro precision, recall and F1 with predictions `score >= threshold`.
pub fn prf_at_threshold(scores: &Array2<f64>, targets: &Array2<u8>, threshold: f64) -> Result<PrfSummary> {
    check_scores(scores, targets)?;
    let k = scores.ncols();
    let mut per_class = Vec::with_capacity(k);
    for c in 0..k {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for (&s, &y) in scores.column(c).iter().zip(targets.column(c).iter()) {
            match (s >= threshold, y == 1) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        let mut zero_division = false;
        let precision = ratio(tp, tp + fp, &mut zero_division);
        let recall = ratio(tp, tp + fn_, &mut zero_division);
        let f1 = ratio(2 * tp, 2 * tp + fp + fn_, &mut zero_division);
        per_class.push(ClassPrf {
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
            zero_division,
        });
    }
    let mean = |f: fn(&ClassPrf) -> f64| per_class.iter().map(f).sum::<f64>() / k.max(1) as f64;
    Ok(PrfSummary {
        precision: mean(|c| c.precision),
        recall: mean(|c| c.recall),
        f1: mean(|c| c.f1),
        per_class,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub f1: f64,
    pub auroc: Option<f64>,
    pub recall: f64,
    pub precision: f64,
}

/// Macro metrics with their per-class breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub f1: f64,
    pub auroc: f64,
    pub recall: f64,
    pub precision: f64,
    pub threshold: f64,
    pub per_class: Vec<ClassMetrics>,
    pub notes: Vec<String>,
}

pub fn metric_report(scores: &Array2<f64>, targets: &Array2<u8>, threshold: f64, class_names: &[String]) -> Result<MetricReport> {
    let auc = auroc_macro(scores, targets)?;
    let prf = prf_at_threshold(scores, targets, threshold)?;
    let name = |c: usize| class_names.get(c).cloned().unwrap_or_else(|| format!("class{c}"));
    let mut notes = Vec::new();
    for &c in &auc.excluded {
        notes.push(format!("{} excluded from AUROC: single-valued targets", name(c)));
    }
    for (c, p) in prf.per_class.iter().enumerate() {
        if p.zero_division {
            notes.push(format!("{}: zero denominator in precision/recall/F1, counted as 0", name(c)));
        }
    }
    let per_class = prf
        .per_class
        .iter()
        .enumerate()
        .map(|(c, p)| ClassMetrics {
            class: name(c),
            f1: p.f1,
            auroc: auc.per_class[c],
            recall: p.recall,
            precision: p.precision,
        })
        .collect();
    Ok(MetricReport {
        f1: prf.f1,
        auroc: auc.macro_auroc,
        recall: prf.recall,
        precision: prf.precision,
        threshold,
        per_class,
        notes,
    })
}

/// Mean with a two-sided 95% Student-t interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
}

pub fn aggregate_seeds(values: &[f64]) -> Result<SeedSummary> {
    let n = values.len();
    ensure!(n >= 2, Input, "need at least 2 values to form an interval, got {n}");
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map_err(|e| Error::Metric(e.to_string()))?
        .inverse_cdf(0.975);
    let half = t * (var / n as f64).sqrt();
    Ok(SeedSummary {
        mean,
        ci_low: mean - half,
        ci_high: mean + half,
        n,
    })
}
