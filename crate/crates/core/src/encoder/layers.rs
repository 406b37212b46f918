//! Layer primitives over channel-major activations.
//!
//! Activations are stored as `[channel][batch][time]` so that a convolution is
//! one GEMM over the whole batch and normalization statistics are contiguous
//! per channel.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Act {
    pub c: usize,
    pub b: usize,
    pub l: usize,
    pub data: Vec<f64>,
}

impl Act {
    pub fn zeros(c: usize, b: usize, l: usize) -> Self {
        Act {
            c,
            b,
            l,
            data: vec![0.0; c * b * l],
        }
    }

    pub fn same_shape(&self) -> Self {
        Act::zeros(self.c, self.b, self.l)
    }

    /// From batch-major `[b][c][l]`.
    pub fn from_batch_major(b: usize, c: usize, l: usize, src: &[f64]) -> Self {
        let mut out = Act::zeros(c, b, l);
        for bi in 0..b {
            for ci in 0..c {
                let s = (bi * c + ci) * l;
                let d = (ci * b + bi) * l;
                out.data[d..d + l].copy_from_slice(&src[s..s + l]);
            }
        }
        out
    }

    /// To batch-major `[b][c][l]`.
    pub fn to_batch_major(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.data.len()];
        for bi in 0..self.b {
            for ci in 0..self.c {
                let s = (ci * self.b + bi) * self.l;
                let d = (bi * self.c + ci) * self.l;
                out[d..d + self.l].copy_from_slice(&self.data[s..s + self.l]);
            }
        }
        out
    }
}

/// `c = a * b + beta * c` with optional transposes; `a` is `m x k` after
/// transposition, `b` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    let a = if a_t {
        ArrayView2::from_shape((k, m), a).unwrap().reversed_axes()
    } else {
        ArrayView2::from_shape((m, k), a).unwrap()
    };
    let b = if b_t {
        ArrayView2::from_shape((n, k), b).unwrap().reversed_axes()
    } else {
        ArrayView2::from_shape((k, n), b).unwrap()
    };
    let mut c = ArrayViewMut2::from_shape((m, n), c).unwrap();
    general_mat_mul(1.0, &a, &b, beta, &mut c);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_len(&self, l: usize) -> usize {
        (l + 2 * self.pad).saturating_sub(self.k) / self.stride + 1
    }
}

pub(crate) struct ConvCache {
    pub cols: Vec<f64>,
    pub in_l: usize,
    pub out_l: usize,
    pub b: usize,
}

pub(crate) fn conv_forward(g: &ConvGeom, w: &[f64], x: &Act) -> (Act, ConvCache) {
    debug_assert_eq!(x.c, g.cin);
    let out_l = g.out_len(x.l);
    let rows = g.cin * g.k;
    let cols_n = x.b * out_l;
    let mut cols = vec![0.0; rows * cols_n];
    for ci in 0..g.cin {
        for kk in 0..g.k {
            let row = &mut cols[(ci * g.k + kk) * cols_n..(ci * g.k + kk + 1) * cols_n];
            for bi in 0..x.b {
                let src = &x.data[(ci * x.b + bi) * x.l..(ci * x.b + bi + 1) * x.l];
                let dst = &mut row[bi * out_l..(bi + 1) * out_l];
                for (to, d) in dst.iter_mut().enumerate() {
                    let pos = (to * g.stride + kk) as isize - g.pad as isize;
                    if pos >= 0 && (pos as usize) < x.l {
                        *d = src[pos as usize];
                    }
                }
            }
        }
    }
    let mut out = Act::zeros(g.cout, x.b, out_l);
    gemm(g.cout, rows, cols_n, w, false, &cols, false, 0.0, &mut out.data);
    (
        out,
        ConvCache {
            cols,
            in_l: x.l,
            out_l,
            b: x.b,
        },
    )
}

/// Returns (weight gradient, input gradient).
pub(crate) fn conv_backward(g: &ConvGeom, w: &[f64], cache: &ConvCache, dy: &Act) -> (Vec<f64>, Act) {
    let rows = g.cin * g.k;
    let cols_n = cache.b * cache.out_l;
    let mut dw = vec![0.0; g.cout * rows];
    gemm(g.cout, cols_n, rows, &dy.data, false, &cache.cols, true, 0.0, &mut dw);
    let mut dcols = vec![0.0; rows * cols_n];
    gemm(rows, g.cout, cols_n, w, true, &dy.data, false, 0.0, &mut dcols);
    let mut dx = Act::zeros(g.cin, cache.b, cache.in_l);
    for ci in 0..g.cin {
        for kk in 0..g.k {
            let row = &dcols[(ci * g.k + kk) * cols_n..(ci * g.k + kk + 1) * cols_n];
            for bi in 0..cache.b {
                let dst = &mut dx.data[(ci * cache.b + bi) * cache.in_l..(ci * cache.b + bi + 1) * cache.in_l];
                let src = &row[bi * cache.out_l..(bi + 1) * cache.out_l];
                for (to, s) in src.iter().enumerate() {
                    let pos = (to * g.stride + kk) as isize - g.pad as isize;
                    if pos >= 0 && (pos as usize) < cache.in_l {
                        dst[pos as usize] += s;
                    }
                }
            }
        }
    }
    (dw, dx)
}

pub(crate) struct BnCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    /// Batch mean and biased variance per channel; `None` in evaluation mode.
    pub batch_stats: Option<(Vec<f64>, Vec<f64>)>,
}

/// Batch normalization. With `running = Some((mean, var))` the running
/// statistics are used instead of batch statistics.
pub(crate) fn bn_forward(
    gamma: &[f64],
    beta: &[f64],
    x: &Act,
    running: Option<(&[f64], &[f64])>,
) -> (Act, BnCache) {
    let n = x.b * x.l;
    let mut out = x.same_shape();
    let mut xhat = vec![0.0; x.data.len()];
    let mut inv_std = vec![0.0; x.c];
    let mut means = vec![0.0; x.c];
    let mut vars = vec![0.0; x.c];
    for c in 0..x.c {
        let seg = &x.data[c * n..(c + 1) * n];
        let (mean, var) = match running {
            Some((rm, rv)) => (rm[c], rv[c]),
            None => {
                let mean = seg.iter().sum::<f64>() / n as f64;
                let var = seg.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                (mean, var)
            }
        };
        means[c] = mean;
        vars[c] = var;
        let is = 1.0 / (var + BN_EPS).sqrt();
        inv_std[c] = is;
        for i in 0..n {
            let h = (seg[i] - mean) * is;
            xhat[c * n + i] = h;
            out.data[c * n + i] = gamma[c] * h + beta[c];
        }
    }
    let batch_stats = running.is_none().then_some((means, vars));
    (
        out,
        BnCache {
            xhat,
            inv_std,
            batch_stats,
        },
    )
}

/// Returns (dgamma, dbeta, dx).
pub(crate) fn bn_backward(gamma: &[f64], cache: &BnCache, dy: &Act) -> (Vec<f64>, Vec<f64>, Act) {
    let n = dy.b * dy.l;
    let mut dgamma = vec![0.0; dy.c];
    let mut dbeta = vec![0.0; dy.c];
    let mut dx = dy.same_shape();
    for c in 0..dy.c {
        let g = &dy.data[c * n..(c + 1) * n];
        let h = &cache.xhat[c * n..(c + 1) * n];
        let db: f64 = g.iter().sum();
        let dg: f64 = g.iter().zip(h).map(|(a, b)| a * b).sum();
        dgamma[c] = dg;
        dbeta[c] = db;
        let dst = &mut dx.data[c * n..(c + 1) * n];
        if cache.batch_stats.is_some() {
            let k = gamma[c] * cache.inv_std[c] / n as f64;
            for i in 0..n {
                dst[i] = k * (n as f64 * g[i] - db - h[i] * dg);
            }
        } else {
            let k = gamma[c] * cache.inv_std[c];
            for i in 0..n {
                dst[i] = k * g[i];
            }
        }
    }
    (dgamma, dbeta, dx)
}

pub(crate) fn relu_inplace(x: &mut Act) {
    x.data.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Masks `dy` by `y > 0` where `y` is the ReLU output.
pub(crate) fn relu_backward_inplace(y: &Act, dy: &mut Act) {
    for (d, &o) in dy.data.iter_mut().zip(&y.data) {
        if o <= 0.0 {
            *d = 0.0;
        }
    }
}

/// Mean over time; returns batch x channels, row-major.
pub(crate) fn avg_pool(x: &Act) -> Vec<f64> {
    let mut out = vec![0.0; x.b * x.c];
    for c in 0..x.c {
        for b in 0..x.b {
            let seg = &x.data[(c * x.b + b) * x.l..(c * x.b + b + 1) * x.l];
            out[b * x.c + c] = seg.iter().sum::<f64>() / x.l as f64;
        }
    }
    out
}

pub(crate) fn avg_pool_backward(c: usize, b: usize, l: usize, dy: &[f64]) -> Act {
    let mut dx = Act::zeros(c, b, l);
    for ci in 0..c {
        for bi in 0..b {
            let g = dy[bi * c + ci] / l as f64;
            dx.data[(ci * b + bi) * l..(ci * b + bi + 1) * l]
                .iter_mut()
                .for_each(|v| *v = g);
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use rand::Rng;

    fn rand_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = stream_rng(seed, 77);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn rand_act(c: usize, b: usize, l: usize, seed: u64) -> Act {
        Act {
            c,
            b,
            l,
            data: rand_vec(c * b * l, seed),
        }
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    fn rel(a: f64, n: f64) -> f64 {
        (a - n).abs() / a.abs().max(n.abs()).max(1e-7)
    }

    /// Central differences of `f` at `x` along every coordinate.
    fn numeric(x: &[f64], f: &dyn Fn(&[f64]) -> f64) -> Vec<f64> {
        let h = 1e-5;
        (0..x.len())
            .map(|i| {
                let mut p = x.to_vec();
                p[i] += h;
                let up = f(&p);
                p[i] -= 2.0 * h;
                (up - f(&p)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn batch_major_round_trip() {
        let src = rand_vec(2 * 3 * 5, 1);
        let a = Act::from_batch_major(2, 3, 5, &src);
        assert_eq!(a.to_batch_major(), src);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let g = ConvGeom {
            cin: 2,
            cout: 3,
            k: 3,
            stride: 2,
            pad: 1,
        };
        let x = rand_act(2, 2, 9, 3);
        let w = rand_vec(3 * 2 * 3, 4);
        let (y, _) = conv_forward(&g, &w, &x);
        assert_eq!(y.l, 5);
        for co in 0..3 {
            for b in 0..2 {
                for t in 0..5 {
                    let mut acc = 0.0;
                    for ci in 0..2 {
                        for kk in 0..3 {
                            let pos = (t * 2 + kk) as isize - 1;
                            if pos >= 0 && pos < 9 {
                                acc += w[(co * 2 + ci) * 3 + kk] * x.data[(ci * 2 + b) * 9 + pos as usize];
                            }
                        }
                    }
                    assert!((y.data[(co * 2 + b) * 5 + t] - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let g = ConvGeom {
            cin: 2,
            cout: 3,
            k: 5,
            stride: 2,
            pad: 2,
        };
        let x = rand_act(2, 3, 11, 5);
        let w = rand_vec(3 * 2 * 5, 6);
        let (y, cache) = conv_forward(&g, &w, &x);
        let r = rand_vec(y.data.len(), 7);
        let dy = Act {
            data: r.clone(),
            ..y.same_shape()
        };
        let (dw, dx) = conv_backward(&g, &w, &cache, &dy);
        let nw = numeric(&w, &|w| dot(&conv_forward(&g, w, &x).0.data, &r));
        let nx = numeric(&x.data, &|d| {
            let xa = Act { data: d.to_vec(), ..x.clone() };
            dot(&conv_forward(&g, &w, &xa).0.data, &r)
        });
        for (a, n) in dw.iter().zip(&nw).chain(dx.data.iter().zip(&nx)) {
            assert!(rel(*a, *n) < 1e-6, "{a} vs {n}");
        }
    }

    #[test]
    fn bn_gradients_match_finite_differences() {
        let x = rand_act(3, 2, 6, 8);
        let gamma = rand_vec(3, 9);
        let beta = rand_vec(3, 10);
        let r = rand_vec(x.data.len(), 11);
        for running in [false, true] {
            let rm = vec![0.1, -0.2, 0.3];
            let rv = vec![0.5, 1.5, 0.9];
            let stats = running.then_some((rm.as_slice(), rv.as_slice()));
            let (_, cache) = bn_forward(&gamma, &beta, &x, stats);
            let dy = Act { data: r.clone(), ..x.same_shape() };
            let (dg, db, dx) = bn_backward(&gamma, &cache, &dy);
            let f_x = |d: &[f64]| {
                let xa = Act { data: d.to_vec(), ..x.clone() };
                dot(&bn_forward(&gamma, &beta, &xa, stats).0.data, &r)
            };
            let f_g = |g: &[f64]| dot(&bn_forward(g, &beta, &x, stats).0.data, &r);
            let f_b = |b: &[f64]| dot(&bn_forward(&gamma, b, &x, stats).0.data, &r);
            for (a, n) in dx.data.iter().zip(&numeric(&x.data, &f_x))
                .chain(dg.iter().zip(&numeric(&gamma, &f_g)))
                .chain(db.iter().zip(&numeric(&beta, &f_b)))
            {
                assert!(rel(*a, *n) < 1e-5, "running={running}: {a} vs {n}");
            }
        }
    }

    #[test]
    fn pool_gradient_is_uniform_spread() {
        let x = rand_act(2, 3, 4, 12);
        let r = rand_vec(6, 13);
        let dx = avg_pool_backward(2, 3, 4, &r);
        let nx = numeric(&x.data, &|d| {
            let xa = Act { data: d.to_vec(), ..x.clone() };
            dot(&avg_pool(&xa), &r)
        });
        for (a, n) in dx.data.iter().zip(&nx) {
            assert!(rel(*a, *n) < 1e-7);
        }
    }

    #[test]
    fn relu_gradient_masks_inactive_units() {
        let mut y = Act { c: 1, b: 1, l: 4, data: vec![-1.0, 0.5, 0.0, 2.0] };
        relu_inplace(&mut y);
        let mut dy = Act { data: vec![1.0; 4], ..y.clone() };
        relu_backward_inplace(&y, &mut dy);
        assert_eq!(dy.data, vec![0.0, 1.0, 0.0, 1.0]);
    }
}
