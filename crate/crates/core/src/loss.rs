//! Poly-window InfoNCE.
//!
//! Rows of the embedding matrix `Z` are ordered `a = sample * M + window`. With
//! `S = Z Z^T / tau` and `P(a)` the other windows of anchor `a`'s sample:
//!
//! ```text
//! geometric:  L = -1/(NM) sum_a [ 1/(M-1) sum_{b in P(a)} S_ab - log sum_{c != a} exp S_ac ]
//! arithmetic: L =  1/(NM) sum_a [ log(M-1) + log sum_{c != a} exp S_ac - log sum_{b in P(a)} exp S_ab ]
//! ```
//!
//! Both reduce to two-view InfoNCE at `M = 2`. Every log-sum-exp subtracts its
//! row maximum. The kernels run in 64-bit and return the gradient with respect
//! to `Z` (normalization is the encoder's business).
//!
//! [`oracle_loss`] evaluates the same objectives the long way, from explicit
//! per-pair probabilities `p_ab = exp S_ab / sum_{c != a} exp S_ac`, and is the
//! reference the kernels are tested against.

use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Largest `N * M` the oracle accepts unless explicitly unguarded.
pub const ORACLE_MAX_ROWS: usize = 64;
/// Default temperature.
pub const DEFAULT_TAU: f64 = 0.1;

/// How an anchor's positive probabilities are aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Geometric,
    Arithmetic,
}

impl LossKind {
    pub const ALL: [LossKind; 2] = [LossKind::Geometric, LossKind::Arithmetic];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Geometric => "geometric",
            LossKind::Arithmetic => "arithmetic",
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geometric" => Ok(LossKind::Geometric),
            "arithmetic" => Ok(LossKind::Arithmetic),
            other => Err(Error::Config(format!(
                "unknown loss kind {other:?}; valid kinds: geometric, arithmetic"
            ))),
        }
    }
}

/// Binary same-sample, different-window mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PositiveMask {
    pub n: usize,
    pub m: usize,
    pub mask: Array2<bool>,
}

impl PositiveMask {
    pub fn rows(&self) -> usize {
        self.n * self.m
    }

    /// Positive indices of anchor `a`.
    pub fn positives(&self, a: usize) -> impl Iterator<Item = usize> + '_ {
        let s = a / self.m;
        (s * self.m..(s + 1) * self.m).filter(move |&b| b != a)
    }
}

pub fn build_mask(n: usize, m: usize) -> Result<PositiveMask> {
    ensure!(n >= 2, Config, "batch needs at least 2 samples (got {n}); with one there are no negatives");
    ensure!(m >= 2, Config, "need at least 2 windows per sample (got {m})");
    let mask = Array2::from_shape_fn((n * m, n * m), |(a, b)| a != b && a / m == b / m);
    Ok(PositiveMask { n, m, mask })
}

/// Scaled cosine similarities together with the embeddings they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub s: Array2<f64>,
    pub tau: f64,
    pub z: Array2<f64>,
}

/// `S = Z Z^T / tau`. Rows of `z` must be unit-norm within 1e-4.
pub fn similarity(z: &Array2<f64>, tau: f64) -> Result<SimilarityMatrix> {
    ensure!(tau > 0.0 && tau.is_finite(), Config, "temperature must be positive, got {tau}");
    for (i, row) in z.rows().into_iter().enumerate() {
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        ensure!(
            (norm - 1.0).abs() <= 1e-4,
            Input,
            "embedding row {i} has norm {norm}, expected unit norm"
        );
    }
    Ok(similarity_unchecked(z, tau))
}

pub(crate) fn similarity_unchecked(z: &Array2<f64>, tau: f64) -> SimilarityMatrix {
    let s = z.dot(&z.t()) / tau;
    SimilarityMatrix {
        s,
        tau,
        z: z.clone(),
    }
}

/// Loss value and its gradient with respect to the embedding matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad_z: Array2<f64>,
}

/// Softmax over the entries of `row` selected by `keep`, with its log-sum-exp.
/// Unselected positions get zero weight.
fn masked_softmax(row: ndarray::ArrayView1<f64>, keep: impl Fn(usize) -> bool, weights: &mut [f64]) -> f64 {
    let max = row
        .iter()
        .enumerate()
        .filter(|(j, _)| keep(*j))
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (j, &v) in row.iter().enumerate() {
        weights[j] = if keep(j) { (v - max).exp() } else { 0.0 };
        total += weights[j];
    }
    weights.iter_mut().for_each(|w| *w /= total);
    max + total.ln()
}

fn check_dims(sim: &SimilarityMatrix, mask: &PositiveMask) -> Result<()> {
    let r = mask.rows();
    ensure!(
        sim.s.dim() == (r, r) && sim.z.nrows() == r,
        Input,
        "similarity matrix is {:?} but the mask expects {r}x{r}",
        sim.s.dim()
    );
    Ok(())
}

/// Turns `dL/dS` into `dL/dZ = (G + G^T) Z / tau`.
fn grad_from_s(g: &Array2<f64>, sim: &SimilarityMatrix) -> Array2<f64> {
    (g + &g.t()).dot(&sim.z) / sim.tau
}

pub fn loss_geometric(sim: &SimilarityMatrix, mask: &PositiveMask) -> Result<LossOutput> {
    check_dims(sim, mask)?;
    let rows = mask.rows();
    let inv_pos = 1.0 / (mask.m - 1) as f64;
    let scale = 1.0 / rows as f64;
    let mut g = Array2::<f64>::zeros((rows, rows));
    let mut w = vec![0.0; rows];
    let mut total = 0.0;
    for a in 0..rows {
        let lse = masked_softmax(sim.s.row(a), |c| c != a, &mut w);
        let pos_mean: f64 = mask.positives(a).map(|b| sim.s[[a, b]]).sum::<f64>() * inv_pos;
        total += lse - pos_mean;
        for c in 0..rows {
            g[[a, c]] = scale * w[c];
        }
        for b in mask.positives(a) {
            g[[a, b]] -= scale * inv_pos;
        }
    }
    Ok(LossOutput {
        value: total * scale,
        grad_z: grad_from_s(&g, sim),
    })
}

pub fn loss_arithmetic(sim: &SimilarityMatrix, mask: &PositiveMask) -> Result<LossOutput> {
    check_dims(sim, mask)?;
    let rows = mask.rows();
    let m = mask.m;
    let log_pos_count = ((m - 1) as f64).ln();
    let scale = 1.0 / rows as f64;
    let mut g = Array2::<f64>::zeros((rows, rows));
    let mut w_all = vec![0.0; rows];
    let mut w_pos = vec![0.0; rows];
    let mut total = 0.0;
    for a in 0..rows {
        let lse_all = masked_softmax(sim.s.row(a), |c| c != a, &mut w_all);
        let sample = a / m;
        let lse_pos = masked_softmax(sim.s.row(a), |b| b != a && b / m == sample, &mut w_pos);
        total += log_pos_count + lse_all - lse_pos;
        for c in 0..rows {
            g[[a, c]] = scale * (w_all[c] - w_pos[c]);
        }
    }
    Ok(LossOutput {
        value: total * scale,
        grad_z: grad_from_s(&g, sim),
    })
}

/// Dispatches on `kind`.
pub fn loss(kind: LossKind, sim: &SimilarityMatrix, mask: &PositiveMask) -> Result<LossOutput> {
    match kind {
        LossKind::Geometric => loss_geometric(sim, mask),
        LossKind::Arithmetic => loss_arithmetic(sim, mask),
    }
}

/// Reference evaluation from explicit per-pair probabilities. Rejects
/// `N * M > 64`.
pub fn oracle_loss(z: &Array2<f64>, tau: f64, n: usize, m: usize, kind: LossKind) -> Result<f64> {
    ensure!(
        n * m <= ORACLE_MAX_ROWS,
        Guard,
        "oracle limited to {ORACLE_MAX_ROWS} rows, got {}",
        n * m
    );
    oracle_loss_unguarded(z, tau, n, m, kind)
}

/// [`oracle_loss`] without the size guard; used by the benchmark.
///
/// For every anchor and every positive, the similarity and the full
/// denominator are recomputed from raw dot products, so the cost is
/// `O(N^2 M^2 (M-1) d)`. The only numerical device is subtracting the row
/// maximum inside each `p_ab`. The geometric mean is formed as a literal
/// product of probabilities; if that product underflows, the mean of logs is
/// used instead.
pub fn oracle_loss_unguarded(z: &Array2<f64>, tau: f64, n: usize, m: usize, kind: LossKind) -> Result<f64> {
    ensure!(n >= 2 && m >= 2, Config, "oracle needs N >= 2 and M >= 2");
    ensure!(tau > 0.0, Config, "temperature must be positive");
    let rows = n * m;
    ensure!(z.nrows() == rows, Input, "Z has {} rows, expected {rows}", z.nrows());
    let sim = |a: usize, b: usize| -> f64 {
        z.row(a).iter().zip(z.row(b).iter()).map(|(x, y)| x * y).sum::<f64>() / tau
    };
    let mut total = 0.0;
    for a in 0..rows {
        let sample = a / m;
        let positives: Vec<usize> = (sample * m..(sample + 1) * m).filter(|&b| b != a).collect();
        let probs: Vec<f64> = positives
            .iter()
            .map(|&b| {
                let row_max = (0..rows).filter(|&c| c != a).map(|c| sim(a, c)).fold(f64::NEG_INFINITY, f64::max);
                let denom: f64 = (0..rows).filter(|&c| c != a).map(|c| (sim(a, c) - row_max).exp()).sum();
                (sim(a, b) - row_max).exp() / denom
            })
            .collect();
        let k = positives.len() as f64;
        let aggregate_log = match kind {
            LossKind::Geometric => {
                let product: f64 = probs.iter().product();
                if product >= f64::MIN_POSITIVE {
                    product.powf(1.0 / k).ln()
                } else {
                    probs.iter().map(|p| p.ln()).sum::<f64>() / k
                }
            }
            LossKind::Arithmetic => (probs.iter().sum::<f64>() / k).ln(),
        };
        total += aggregate_log;
    }
    Ok(-total / rows as f64)
}

/// Maximum relative error between the analytic `dL/dZ` and central
/// differences with step 1e-5. Requires `N * M <= 32`.
///
/// Relative error is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn loss_grad_check(z: &Array2<f64>, tau: f64, n: usize, m: usize, kind: LossKind) -> Result<f64> {
    ensure!(n * m <= 32, Guard, "gradient check limited to 32 rows, got {}", n * m);
    let mask = build_mask(n, m)?;
    let analytic = loss(kind, &similarity_unchecked(z, tau), &mask)?.grad_z;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut probe = z.clone();
    for i in 0..z.nrows() {
        for j in 0..z.ncols() {
            let orig = z[[i, j]];
            probe[[i, j]] = orig + h;
            let up = loss(kind, &similarity_unchecked(&probe, tau), &mask)?.value;
            probe[[i, j]] = orig - h;
            let dn = loss(kind, &similarity_unchecked(&probe, tau), &mask)?.value;
            probe[[i, j]] = orig;
            let numeric = (up - dn) / (2.0 * h);
            let a = analytic[[i, j]];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
        }
    }
    Ok(worst)
}

/// Median wall-clock of the kernel path versus the per-pair oracle path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub repeats: usize,
    pub fast_path_ns: u128,
    pub oracle_path_ns: u128,
    /// Half the interquartile range of each path's timings, in ns.
    pub fast_spread_ns: u128,
    pub oracle_spread_ns: u128,
    /// `|fast - oracle|` verified before timing.
    pub max_abs_diff: f64,
}

impl BenchReport {
    /// Structured rows `N,M,d,path,median_ns`.
    pub fn csv_rows(&self) -> String {
        format!(
            "{},{},{},fast,{}\n{},{},{},oracle,{}\n",
            self.n, self.m, self.d, self.fast_path_ns, self.n, self.m, self.d, self.oracle_path_ns
        )
    }
}

pub const BENCH_CSV_HEADER: &str = "N,M,d,path,median_ns\n";

fn median_and_spread(mut xs: Vec<u128>) -> (u128, u128) {
    xs.sort_unstable();
    let n = xs.len();
    let median = if n % 2 == 1 { xs[n / 2] } else { (xs[n / 2 - 1] + xs[n / 2]) / 2 };
    let q1 = xs[n / 4];
    let q3 = xs[(3 * n) / 4].max(q1);
    (median, (q3 - q1) / 2)
}

/// Times both routes on one random, normalized `Z` (geometric kind).
/// Values must agree within 1e-9 before any timing is taken.
pub fn bench_positive_aggregation(n: usize, m: usize, d: usize, repeats: usize, seed: u64) -> Result<BenchReport> {
    use rand::Rng;
    ensure!(repeats >= 1, Config, "repeats must be >= 1");
    let mut rng = crate::rng::stream_rng(seed, 0xBE_4C);
    let raw = Array2::from_shape_fn((n * m, d), |_| rng.random_range(-1.0..1.0));
    let z = crate::encoder::l2_normalize(&raw).rows;
    let tau = DEFAULT_TAU;
    let mask = build_mask(n, m)?;
    let kind = LossKind::Geometric;
    let fast = loss(kind, &similarity(&z, tau)?, &mask)?.value;
    let slow = oracle_loss_unguarded(&z, tau, n, m, kind)?;
    let diff = (fast - slow).abs();
    ensure!(diff <= 1e-9, Numeric, "kernel and oracle disagree by {diff}");
    let mut fast_t = Vec::with_capacity(repeats);
    let mut slow_t = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t0 = Instant::now();
        let v = loss(kind, &similarity(&z, tau)?, &mask)?.value;
        fast_t.push(t0.elapsed().as_nanos());
        std::hint::black_box(v);
        let t0 = Instant::now();
        let v = oracle_loss_unguarded(&z, tau, n, m, kind)?;
        slow_t.push(t0.elapsed().as_nanos());
        std::hint::black_box(v);
    }
    let (fast_path_ns, fast_spread_ns) = median_and_spread(fast_t);
    let (oracle_path_ns, oracle_spread_ns) = median_and_spread(slow_t);
    Ok(BenchReport {
        n,
        m,
        d,
        repeats,
        fast_path_ns,
        oracle_path_ns,
        fast_spread_ns,
        oracle_spread_ns,
        max_abs_diff: diff,
    })
}
