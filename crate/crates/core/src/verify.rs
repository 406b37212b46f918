//! Self-check suites behind the `verify` command.
//!
//! Each suite compares a production path against an independent reference on
//! seeded random instances. Loss kernels are passed in so that a deliberately
//! broken kernel can be shown to fail.

use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::l2_normalize;
use crate::error::Result;
use crate::eval::{self, auroc_binary, prf_at_threshold};
use crate::loss::{self, LossKind, LossOutput, PositiveMask, SimilarityMatrix};
use crate::rng::stream_rng;
use crate::sampler::{self, CropConfig, Placement};

pub type LossKernel = fn(&SimilarityMatrix, &PositiveMask) -> Result<LossOutput>;

/// The geometric and arithmetic kernels under test.
#[derive(Clone, Copy)]
pub struct Kernels {
    pub geometric: LossKernel,
    pub arithmetic: LossKernel,
}

impl Default for Kernels {
    fn default() -> Self {
        Kernels {
            geometric: loss::loss_geometric,
            arithmetic: loss::loss_arithmetic,
        }
    }
}

impl Kernels {
    fn get(&self, kind: LossKind) -> LossKernel {
        match kind {
            LossKind::Geometric => self.geometric,
            LossKind::Arithmetic => self.arithmetic,
        }
    }

    fn value(&self, kind: LossKind, z: &Array2<f64>, tau: f64, n: usize, m: usize) -> Result<f64> {
        let sim = loss::similarity(z, tau)?;
        Ok(self.get(kind)(&sim, &loss::build_mask(n, m)?)?.value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    Loss,
    Sampler,
    Metrics,
}

impl Group {
    pub fn name(self) -> &'static str {
        match self {
            Group::Loss => "loss",
            Group::Sampler => "sampler",
            Group::Metrics => "metrics",
        }
    }

    pub fn parse(s: &str) -> Option<Group> {
        [Group::Loss, Group::Sampler, Group::Metrics]
            .into_iter()
            .find(|g| g.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub group: Group,
    pub passed: bool,
    pub checks: usize,
    pub detail: String,
    pub seconds: f64,
}

struct Suite {
    name: &'static str,
    group: Group,
    run: fn(&Kernels) -> Result<(usize, Option<String>)>,
}

const SUITES: [Suite; 8] = [
    Suite { name: "loss-oracle", group: Group::Loss, run: loss_oracle },
    Suite { name: "loss-m2", group: Group::Loss, run: loss_m2 },
    Suite { name: "loss-amgm", group: Group::Loss, run: loss_amgm },
    Suite { name: "loss-degenerate", group: Group::Loss, run: loss_degenerate },
    Suite { name: "loss-gradcheck", group: Group::Loss, run: loss_gradcheck },
    Suite { name: "sampler", group: Group::Sampler, run: sampler_suite },
    Suite { name: "metrics-auroc", group: Group::Metrics, run: metrics_auroc },
    Suite { name: "metrics-prf", group: Group::Metrics, run: metrics_prf },
];

pub fn suite_names() -> Vec<&'static str> {
    SUITES.iter().map(|s| s.name).collect()
}

/// Runs every suite in `only` (all when `None`) with the given kernels.
pub fn run_suites(only: Option<Group>, kernels: &Kernels) -> Vec<SuiteResult> {
    SUITES
        .iter()
        .filter(|s| only.is_none_or(|g| g == s.group))
        .map(|s| {
            let started = Instant::now();
            let (passed, checks, detail) = match (s.run)(kernels) {
                Ok((checks, None)) => (true, checks, String::new()),
                Ok((checks, Some(why))) => (false, checks, why),
                Err(e) => (false, 0, e.to_string()),
            };
            SuiteResult {
                name: s.name,
                group: s.group,
                passed,
                checks,
                detail,
                seconds: started.elapsed().as_secs_f64(),
            }
        })
        .collect()
}

pub fn random_unit_rows(rng: &mut ChaCha8Rng, rows: usize, d: usize) -> Array2<f64> {
    let raw = Array2::from_shape_fn((rows, d), |_| rng.random_range(-1.0..1.0));
    l2_normalize(&raw).rows
}

fn loss_oracle(k: &Kernels) -> Result<(usize, Option<String>)> {
    let mut rng = stream_rng(2024, 11);
    let mut checks = 0;
    let mut worst: f64 = 0.0;
    for n in 2..=4 {
        for m in 2..=4 {
            for d in [2, 8] {
                for tau in [0.05, 0.1, 0.5, 1.0] {
                    for _ in 0..100 {
                        let z = random_unit_rows(&mut rng, n * m, d);
                        for kind in LossKind::ALL {
                            let fast = k.value(kind, &z, tau, n, m)?;
                            let slow = loss::oracle_loss(&z, tau, n, m, kind)?;
                            worst = worst.max((fast - slow).abs());
                            checks += 1;
                        }
                    }
                }
            }
        }
    }
    Ok((checks, (worst > 1e-9).then(|| format!("max |kernel - oracle| = {worst:e}"))))
}

/// Standard two-view InfoNCE: each row's partner is the other window of its
/// sample, every other row is a negative.
pub fn two_view_infonce(z: &Array2<f64>, tau: f64) -> f64 {
    let rows = z.nrows();
    let mut total = 0.0;
    for a in 0..rows {
        let partner = a ^ 1;
        let logits: Vec<f64> = (0..rows)
            .filter(|&c| c != a)
            .map(|c| z.row(a).dot(&z.row(c)) / tau)
            .collect();
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = top + logits.iter().map(|l| (l - top).exp()).sum::<f64>().ln();
        total += lse - z.row(a).dot(&z.row(partner)) / tau;
    }
    total / rows as f64
}

fn loss_m2(k: &Kernels) -> Result<(usize, Option<String>)> {
    let mut rng = stream_rng(2024, 12);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(2..=8);
        let d = rng.random_range(2..=16);
        let tau = rng.random_range(0.05..1.0);
        let z = random_unit_rows(&mut rng, 2 * n, d);
        let reference = two_view_infonce(&z, tau);
        for kind in LossKind::ALL {
            worst = worst.max((k.value(kind, &z, tau, n, 2)? - reference).abs());
        }
    }
    Ok((2000, (worst > 1e-12).then(|| format!("max deviation from two-view InfoNCE = {worst:e}"))))
}

fn loss_amgm(k: &Kernels) -> Result<(usize, Option<String>)> {
    let mut rng = stream_rng(2024, 13);
    for i in 0..10_000 {
        let n = rng.random_range(2..=5);
        let m = rng.random_range(2..=6);
        let d = rng.random_range(2..=8);
        let tau = rng.random_range(0.05..1.0);
        let z = random_unit_rows(&mut rng, n * m, d);
        let g = k.value(LossKind::Geometric, &z, tau, n, m)?;
        let a = k.value(LossKind::Arithmetic, &z, tau, n, m)?;
        if g < a - 1e-12 {
            return Ok((i + 1, Some(format!("instance {i}: geometric {g} < arithmetic {a}"))));
        }
    }
    Ok((10_000, None))
}

fn loss_degenerate(k: &Kernels) -> Result<(usize, Option<String>)> {
    let mut checks = 0;
    for n in 2..=4 {
        for m in 2..=4 {
            for d in [2, 8] {
                let v: Vec<f64> = (0..d).map(|j| 1.0 + j as f64).collect();
                let z = l2_normalize(&Array2::from_shape_fn((n * m, d), |(_, j)| v[j])).rows;
                let want = ((n * m - 1) as f64).ln();
                for tau in [0.05, 0.1, 0.5, 1.0] {
                    for kind in LossKind::ALL {
                        let got = k.value(kind, &z, tau, n, m)?;
                        checks += 1;
                        if (got - want).abs() > 1e-9 {
                            return Ok((checks, Some(format!("N={n} M={m} {kind}: {got} vs log(NM-1) = {want}"))));
                        }
                    }
                }
            }
        }
    }
    Ok((checks, None))
}

/// Central differences of the kernel value against its returned gradient.
fn kernel_grad_error(kernel: LossKernel, z: &Array2<f64>, tau: f64, n: usize, m: usize) -> Result<f64> {
    let mask = loss::build_mask(n, m)?;
    let value = |z: &Array2<f64>| -> Result<f64> { Ok(kernel(&loss::similarity_unchecked(z, tau), &mask)?.value) };
    let analytic = kernel(&loss::similarity_unchecked(z, tau), &mask)?.grad_z;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut p = z.clone();
    for idx in (0..z.nrows()).flat_map(|i| (0..z.ncols()).map(move |j| (i, j))) {
        let orig = z[idx];
        p[idx] = orig + h;
        let up = value(&p)?;
        p[idx] = orig - h;
        let dn = value(&p)?;
        p[idx] = orig;
        let num = (up - dn) / (2.0 * h);
        let a = analytic[idx];
        worst = worst.max((a - num).abs() / a.abs().max(num.abs()).max(1e-6));
    }
    Ok(worst)
}

fn loss_gradcheck(k: &Kernels) -> Result<(usize, Option<String>)> {
    let mut rng = stream_rng(2024, 14);
    let mut worst: f64 = 0.0;
    let mut checks = 0;
    for (n, m) in [(2, 2), (3, 3), (4, 4), (2, 8), (8, 2)] {
        for kind in LossKind::ALL {
            let z = random_unit_rows(&mut rng, n * m, 6);
            worst = worst.max(kernel_grad_error(k.get(kind), &z, 0.1, n, m)?);
            checks += 1;
        }
    }
    let mut x = Array2::zeros((6, 3));
    x.mapv_inplace(|_: f64| rng.random_range(-3.0..3.0));
    let y = Array2::from_shape_fn((6, 3), |_| rng.random_range(0..2u8));
    let (_, g) = eval::probe_loss(&x, &y)?;
    let mut probe_worst: f64 = 0.0;
    for idx in (0..6).flat_map(|i| (0..3).map(move |j| (i, j))) {
        let h = 1e-5;
        let mut p = x.clone();
        p[idx] += h;
        let up = eval::probe_loss(&p, &y)?.0;
        p[idx] -= 2.0 * h;
        let dn = eval::probe_loss(&p, &y)?.0;
        let num = (up - dn) / (2.0 * h);
        probe_worst = probe_worst.max((g[idx] - num).abs() / g[idx].abs().max(num.abs()).max(1e-6));
    }
    let fail = if worst > 1e-4 {
        Some(format!("loss gradient relative error {worst:e}"))
    } else if probe_worst > 1e-6 {
        Some(format!("probe loss gradient relative error {probe_worst:e}"))
    } else {
        None
    };
    Ok((checks + 18, fail))
}

fn sampler_suite(_: &Kernels) -> Result<(usize, Option<String>)> {
    let mut rng = stream_rng(2024, 15);
    let mut checks = 0;
    let configs = [
        (500, 4, 64, 0.5),
        (500, 8, 64, 0.0),
        (600, 8, 64, 0.0),
        (500, 2, 256, 0.75),
        (250, 6, 32, 0.25),
        (100, 3, 40, 0.5),
        (64, 2, 32, 0.0),
    ];
    for (t, m, l, o) in configs {
        let cfg = CropConfig { num_windows: m, crop_len: l, max_overlap: o, ..Default::default() };
        let cap = cfg.overlap_allowance();
        if !sampler::feasible(t, &cfg) {
            let s = sampler::sample_windows(&mut rng, t, &cfg)?;
            checks += 1;
            if s.placement != Placement::Infeasible {
                return Ok((checks, Some(format!("T={t} M={m} L={l} o={o} should be infeasible"))));
            }
            continue;
        }
        for _ in 0..10_000 {
            let s = sampler::sample_windows(&mut rng, t, &cfg)?;
            checks += 1;
            let st = &s.windows.starts;
            if st.len() != m || st.iter().any(|&x| x + l > t) {
                return Ok((checks, Some(format!("T={t} M={m} L={l}: out-of-range starts {st:?}"))));
            }
            for i in 0..m {
                for j in i + 1..m {
                    if sampler::overlap(st[i], st[j], l) > cap {
                        return Ok((checks, Some(format!("T={t} M={m} L={l} o={o}: cap violated by {st:?}"))));
                    }
                }
            }
        }
    }
    let cfg = CropConfig { num_windows: 8, crop_len: 64, max_overlap: 0.0, ..Default::default() };
    let s = sampler::sample_windows(&mut rng, 256, &cfg)?;
    checks += 1;
    let even: Vec<usize> = (0..8).map(|i| (i as f64 * 192.0 / 7.0).round() as usize).collect();
    if s.placement != Placement::Infeasible || s.windows.starts != even {
        return Ok((checks, Some(format!("infeasible config gave {:?} {:?}", s.placement, s.windows.starts))));
    }
    Ok((checks, None))
}

fn auroc_by_pairs(scores: &[f64], targets: &[u8]) -> Option<f64> {
    let (mut wins, mut pairs) = (0.0, 0usize);
    for (i, _) in targets.iter().enumerate().filter(|(_, &t)| t == 1) {
        for (j, _) in targets.iter().enumerate().filter(|(_, &t)| t == 0) {
            pairs += 1;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    (pairs > 0).then(|| wins / pairs as f64)
}

fn metrics_auroc(_: &Kernels) -> Result<(usize, Option<String>)> {
    let mut rng = stream_rng(2024, 16);
    for case in 0..200 {
        let n = rng.random_range(2..=20);
        let levels = rng.random_range(2..=6);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        let targets: Vec<u8> = (0..n).map(|_| rng.random_range(0..2u8)).collect();
        if auroc_binary(&scores, &targets) != auroc_by_pairs(&scores, &targets) {
            return Ok((case + 1, Some(format!("case {case}: rank AUROC differs from pair count"))));
        }
    }
    Ok((200, None))
}

fn metrics_prf(_: &Kernels) -> Result<(usize, Option<String>)> {
    let mut rng = stream_rng(2024, 17);
    for case in 0..50 {
        let n = rng.random_range(1..=12);
        let k = rng.random_range(1..=3);
        let scores = Array2::from_shape_fn((n, k), |_| rng.random_range(0.0..1.0));
        let targets = Array2::from_shape_fn((n, k), |_| rng.random_range(0..2u8));
        let got = prf_at_threshold(&scores, &targets, 0.5)?;
        let mut p_sum = 0.0;
        let mut r_sum = 0.0;
        let mut f_sum = 0.0;
        for (sc, tc) in scores.axis_iter(Axis(1)).zip(targets.axis_iter(Axis(1))) {
            let pred: Vec<bool> = sc.iter().map(|&s| s >= 0.5).collect();
            let tp = pred.iter().zip(tc.iter()).filter(|(&p, &t)| p && t == 1).count() as f64;
            let pp = pred.iter().filter(|&&p| p).count() as f64;
            let ap = tc.iter().filter(|&&t| t == 1).count() as f64;
            let prec = if pp > 0.0 { tp / pp } else { 0.0 };
            let rec = if ap > 0.0 { tp / ap } else { 0.0 };
            p_sum += prec;
            r_sum += rec;
            f_sum += if pp + ap > 0.0 { 2.0 * tp / (pp + ap) } else { 0.0 };
        }
        let kf = k as f64;
        if (got.precision, got.recall, got.f1) != (p_sum / kf, r_sum / kf, f_sum / kf) {
            return Ok((case + 1, Some(format!("case {case}: confusion-matrix mismatch"))));
        }
    }
    Ok((50, None))
}
