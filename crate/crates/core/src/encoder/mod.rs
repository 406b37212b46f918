//! One-dimensional residual encoder with a linear projection head.
//!
//! The feature path is: stem convolution, normalization and ReLU; residual
//! stages of basic blocks (the first block of every stage after the first
//! halves the time axis); global average pooling over time. Pooled features
//! are `embed_dim` wide and feed a linear head producing `proj_dim`
//! projections, which are L2-normalized before the contrastive loss.
//!
//! All arithmetic is 64-bit. Reverse-mode gradients are hand-written per layer.

mod checkpoint;
mod layers;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::rng::stream_rng;
use crate::tensor::{ParamKind, Tensor};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
use layers::{
    avg_pool, avg_pool_backward, bn_backward, bn_forward, conv_backward, conv_forward, relu_backward_inplace,
    relu_inplace, Act, BnCache, ConvCache, ConvGeom, BN_MOMENTUM,
};

pub const PRESET_RESNET18: &str = "resnet18-1d-512/128";
pub const PRESET_TINY: &str = "tiny-1d-64/32";

/// Encoder architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub in_channels: usize,
    pub stem_width: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    /// Kernel size of every convolution inside residual blocks.
    pub block_kernel: usize,
    pub stage_widths: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
    pub embed_dim: usize,
    pub proj_dim: usize,
    #[serde(default)]
    pub preset_name: Option<String>,
}

impl EncoderConfig {
    /// Named presets:
    ///
    /// * `resnet18-1d-512/128`: stem 64 wide (kernel 7, stride 2), four stages
    ///   of widths 64/128/256/512 with two blocks each, 512-d features, 128-d
    ///   projections. Minimum input length 16.
    /// * `tiny-1d-64/32`: stem 32 wide (kernel 7, stride 2), two stages of
    ///   widths 32/64 with one block each, 64-d features, 32-d projections.
    ///   Minimum input length 4.
    pub fn preset(name: &str, in_channels: usize) -> Result<Self> {
        let (stem, stages, blocks, proj) = match name {
            PRESET_RESNET18 => (64, vec![64, 128, 256, 512], vec![2, 2, 2, 2], 128),
            PRESET_TINY => (32, vec![32, 64], vec![1, 1], 32),
            other => {
                return Err(Error::Config(format!(
                    "unknown encoder preset {other:?}; expected {PRESET_RESNET18} or {PRESET_TINY}"
                )))
            }
        };
        let cfg = EncoderConfig {
            in_channels,
            stem_width: stem,
            stem_kernel: 7,
            stem_stride: 2,
            block_kernel: 3,
            embed_dim: *stages.last().unwrap(),
            stage_widths: stages,
            blocks_per_stage: blocks,
            proj_dim: proj,
            preset_name: Some(name.to_string()),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.in_channels >= 1, Config, "in_channels must be >= 1");
        ensure!(
            self.stem_width >= 1 && self.stem_kernel >= 1 && self.stem_stride >= 1,
            Config,
            "stem width, kernel and stride must be >= 1"
        );
        ensure!(self.block_kernel >= 1, Config, "block_kernel must be >= 1");
        ensure!(
            self.stage_widths.len() == self.blocks_per_stage.len(),
            Config,
            "stage_widths and blocks_per_stage differ in length"
        );
        ensure!(
            self.stage_widths.iter().all(|&w| w >= 1) && self.blocks_per_stage.iter().all(|&b| b >= 1),
            Config,
            "stage widths and block counts must be >= 1"
        );
        let last = self.stage_widths.last().copied().unwrap_or(self.stem_width);
        ensure!(
            self.embed_dim == last,
            Config,
            "embed_dim {} must equal the final width {last}",
            self.embed_dim
        );
        ensure!(self.proj_dim >= 1, Config, "proj_dim must be >= 1");
        Ok(())
    }

    /// Shortest input whose every strided layer still sees at least two
    /// positions per output.
    pub fn min_input_len(&self) -> usize {
        let downsamples = self.stage_widths.len().saturating_sub(1) as u32;
        self.stem_stride * 2usize.pow(downsamples)
    }
}

/// Forward mode: batch statistics (training) or running statistics (evaluation).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Batch of signals, batch-major `[batch][channel][time]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalBatch {
    pub batch: usize,
    pub channels: usize,
    pub len: usize,
    pub data: Vec<f64>,
}

impl SignalBatch {
    pub fn new(batch: usize, channels: usize, len: usize, data: Vec<f64>) -> Result<Self> {
        ensure!(
            data.len() == batch * channels * len,
            Input,
            "signal batch holds {} values, expected {}",
            data.len(),
            batch * channels * len
        );
        Ok(SignalBatch {
            batch,
            channels,
            len,
            data,
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvSlot {
    geom: ConvGeom,
    weight: usize,
}

#[derive(Debug, Clone, Copy)]
struct BnSlot {
    gamma: usize,
    beta: usize,
    stats: usize,
}

#[derive(Debug, Clone)]
struct Block {
    conv1: ConvSlot,
    bn1: BnSlot,
    conv2: ConvSlot,
    bn2: BnSlot,
    shortcut: Option<(ConvSlot, BnSlot)>,
}

#[derive(Debug, Clone)]
struct Architecture {
    stem_conv: ConvSlot,
    stem_bn: BnSlot,
    blocks: Vec<Block>,
    head_weight: usize,
    head_bias: usize,
}

/// Running mean and variance of one normalization layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub name: String,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

struct Builder {
    params: Vec<Tensor>,
    stats: Vec<RunningStats>,
}

impl Builder {
    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> ConvSlot {
        self.params.push(Tensor::zeros(
            format!("{name}.weight"),
            &[cout, cin, k],
            ParamKind::Weight,
        ));
        ConvSlot {
            geom: ConvGeom {
                cin,
                cout,
                k,
                stride,
                pad: k / 2,
            },
            weight: self.params.len() - 1,
        }
    }

    fn bn(&mut self, name: &str, c: usize) -> BnSlot {
        self.params
            .push(Tensor::filled(format!("{name}.gamma"), &[c], ParamKind::NormScale, 1.0));
        self.params
            .push(Tensor::zeros(format!("{name}.beta"), &[c], ParamKind::NormShift));
        self.stats.push(RunningStats {
            name: name.to_string(),
            mean: vec![0.0; c],
            var: vec![1.0; c],
        });
        BnSlot {
            gamma: self.params.len() - 2,
            beta: self.params.len() - 1,
            stats: self.stats.len() - 1,
        }
    }
}

fn build(cfg: &EncoderConfig) -> (Architecture, Vec<Tensor>, Vec<RunningStats>) {
    let mut b = Builder {
        params: Vec::new(),
        stats: Vec::new(),
    };
    let stem_conv = b.conv("stem.conv", cfg.in_channels, cfg.stem_width, cfg.stem_kernel, cfg.stem_stride);
    let stem_bn = b.bn("stem.bn", cfg.stem_width);
    let mut blocks = Vec::new();
    let mut width = cfg.stem_width;
    for (s, (&w, &n)) in cfg.stage_widths.iter().zip(&cfg.blocks_per_stage).enumerate() {
        for j in 0..n {
            let stride = if s > 0 && j == 0 { 2 } else { 1 };
            let p = format!("stage{s}.block{j}");
            let conv1 = b.conv(&format!("{p}.conv1"), width, w, cfg.block_kernel, stride);
            let bn1 = b.bn(&format!("{p}.bn1"), w);
            let conv2 = b.conv(&format!("{p}.conv2"), w, w, cfg.block_kernel, 1);
            let bn2 = b.bn(&format!("{p}.bn2"), w);
            let shortcut = (stride != 1 || width != w).then(|| {
                let c = b.conv(&format!("{p}.shortcut.conv"), width, w, 1, stride);
                let n = b.bn(&format!("{p}.shortcut.bn"), w);
                (c, n)
            });
            blocks.push(Block {
                conv1,
                bn1,
                conv2,
                bn2,
                shortcut,
            });
            width = w;
        }
    }
    b.params
        .push(Tensor::zeros("head.weight", &[cfg.proj_dim, cfg.embed_dim], ParamKind::Weight));
    b.params.push(Tensor::zeros("head.bias", &[cfg.proj_dim], ParamKind::Bias));
    let head_weight = b.params.len() - 2;
    let head_bias = b.params.len() - 1;
    (
        Architecture {
            stem_conv,
            stem_bn,
            blocks,
            head_weight,
            head_bias,
        },
        b.params,
        b.stats,
    )
}

struct ConvBn {
    conv: ConvCache,
    bn: BnCache,
}

struct BlockCache {
    input: Act,
    first: ConvBn,
    hidden: Act,
    second: ConvBn,
    shortcut: Option<ConvBn>,
    output: Act,
}

/// Activations retained by a feature forward pass.
pub struct FeatureCache {
    version: u64,
    stem: ConvBn,
    stem_out: Act,
    blocks: Vec<BlockCache>,
    last_shape: (usize, usize, usize),
    input_shape: (usize, usize, usize),
}

impl FeatureCache {
    /// Which ReLU units are active, in a fixed traversal order. Two forward
    /// passes with equal patterns lie on the same linear piece of the network.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out: Vec<bool> = self.stem_out.data.iter().map(|&v| v > 0.0).collect();
        for b in &self.blocks {
            out.extend(b.hidden.data.iter().map(|&v| v > 0.0));
            out.extend(b.output.data.iter().map(|&v| v > 0.0));
        }
        out
    }
}

/// Result of the full forward pass: features, projections and normalized embeddings.
pub struct ForwardPass {
    pub features: Array2<f64>,
    pub projections: Array2<f64>,
    pub embeddings: Normalized,
    cache: FeatureCache,
}

impl ForwardPass {
    pub fn feature_cache(&self) -> &FeatureCache {
        &self.cache
    }
}

/// Gradients of every parameter plus the input.
pub struct Gradients {
    pub params: Vec<Tensor>,
    pub input: SignalBatch,
}

/// Encoder parameters, normalization buffers and architecture.
#[derive(Debug, Clone)]
pub struct Encoder {
    config: EncoderConfig,
    arch: Architecture,
    params: Vec<Tensor>,
    stats: Vec<RunningStats>,
    version: u64,
}

impl Encoder {
    /// Fan-in scaled uniform initialization: every convolution and the head
    /// weight draw from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, the head bias
    /// likewise; normalization scales start at 1 and shifts at 0.
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (arch, mut params, stats) = build(&config);
        let mut rng = stream_rng(seed, 0x1A17);
        for t in params.iter_mut() {
            let fan_in = match (t.kind, t.shape.as_slice()) {
                (ParamKind::Weight, [_, cin, k]) => cin * k,
                (ParamKind::Weight, [_, d]) => *d,
                (ParamKind::Bias, _) => config.embed_dim,
                _ => continue,
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            t.data
                .iter_mut()
                .for_each(|x| *x = rng.random_range(-bound..bound));
        }
        Ok(Encoder {
            config,
            arch,
            params,
            stats,
            version: 0,
        })
    }

    /// Rebuilds an encoder from stored tensors; names and shapes must match
    /// the architecture implied by `config`.
    pub fn from_parts(config: EncoderConfig, params: Vec<Tensor>, stats: Vec<RunningStats>) -> Result<Self> {
        config.validate()?;
        let (arch, expected, expected_stats) = build(&config);
        ensure!(
            params.len() == expected.len() && stats.len() == expected_stats.len(),
            Data,
            "tensor count does not match the configured architecture"
        );
        for (p, e) in params.iter().zip(&expected) {
            ensure!(
                p.name == e.name && p.shape == e.shape && p.data.len() == e.data.len(),
                Data,
                "tensor {} {:?} does not match expected {} {:?}",
                p.name,
                p.shape,
                e.name,
                e.shape
            );
            ensure!(p.is_finite(), Data, "tensor {} holds non-finite values", p.name);
        }
        for (s, e) in stats.iter().zip(&expected_stats) {
            ensure!(
                s.name == e.name && s.mean.len() == e.mean.len() && s.var.len() == e.var.len(),
                Data,
                "normalization buffer {} does not match expected {}",
                s.name,
                e.name
            );
        }
        let params = params
            .into_iter()
            .zip(&expected)
            .map(|(p, e)| Tensor { kind: e.kind, ..p })
            .collect();
        Ok(Encoder {
            config,
            arch,
            params,
            stats,
            version: 0,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    /// Mutable parameter access. Invalidates every outstanding forward cache.
    pub fn params_mut(&mut self) -> &mut [Tensor] {
        self.version += 1;
        &mut self.params
    }

    pub fn running_stats(&self) -> &[RunningStats] {
        &self.stats
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn head_weight(&self) -> &Tensor {
        &self.params[self.arch.head_weight]
    }

    pub fn head_bias(&self) -> &Tensor {
        &self.params[self.arch.head_bias]
    }

    fn conv_bn(&self, conv: ConvSlot, bn: BnSlot, x: &Act, mode: Mode) -> (Act, ConvBn) {
        let (h, conv_cache) = conv_forward(&conv.geom, &self.params[conv.weight].data, x);
        let running = match mode {
            Mode::Train => None,
            Mode::Eval => {
                let s = &self.stats[bn.stats];
                Some((s.mean.as_slice(), s.var.as_slice()))
            }
        };
        let (y, bn_cache) = bn_forward(&self.params[bn.gamma].data, &self.params[bn.beta].data, &h, running);
        (
            y,
            ConvBn {
                conv: conv_cache,
                bn: bn_cache,
            },
        )
    }

    /// Pooled features, batch x `embed_dim`.
    pub fn forward_features(&self, x: &SignalBatch, mode: Mode) -> Result<(Array2<f64>, FeatureCache)> {
        ensure!(
            x.channels == self.config.in_channels,
            Input,
            "input has {} channels, encoder expects {}",
            x.channels,
            self.config.in_channels
        );
        ensure!(x.batch >= 1, Input, "empty batch");
        let min = self.config.min_input_len();
        ensure!(x.len >= min, Input, "input length {} below minimum {min}", x.len);
        let input = Act::from_batch_major(x.batch, x.channels, x.len, &x.data);
        let (mut stem_out, stem) = self.conv_bn(self.arch.stem_conv, self.arch.stem_bn, &input, mode);
        relu_inplace(&mut stem_out);
        let mut blocks = Vec::with_capacity(self.arch.blocks.len());
        let mut cur = stem_out.clone();
        for blk in &self.arch.blocks {
            let (mut hidden, first) = self.conv_bn(blk.conv1, blk.bn1, &cur, mode);
            relu_inplace(&mut hidden);
            let (mut out, second) = self.conv_bn(blk.conv2, blk.bn2, &hidden, mode);
            let shortcut = match blk.shortcut {
                Some((c, n)) => {
                    let (s, cache) = self.conv_bn(c, n, &cur, mode);
                    out.data.iter_mut().zip(&s.data).for_each(|(o, v)| *o += v);
                    Some(cache)
                }
                None => {
                    out.data.iter_mut().zip(&cur.data).for_each(|(o, v)| *o += v);
                    None
                }
            };
            relu_inplace(&mut out);
            let next = out.clone();
            blocks.push(BlockCache {
                input: cur,
                first,
                hidden,
                second,
                shortcut,
                output: out,
            });
            cur = next;
        }
        let pooled = avg_pool(&cur);
        let features = Array2::from_shape_vec((x.batch, cur.c), pooled).map_err(|e| Error::State(e.to_string()))?;
        ensure!(
            features.iter().all(|v| v.is_finite()),
            Numeric,
            "encoder produced non-finite features"
        );
        Ok((
            features,
            FeatureCache {
                version: self.version,
                stem,
                stem_out,
                blocks,
                last_shape: (cur.c, cur.b, cur.l),
                input_shape: (x.batch, x.channels, x.len),
            },
        ))
    }

    /// Features, projections and normalized embeddings in one pass.
    pub fn forward(&self, x: &SignalBatch, mode: Mode) -> Result<ForwardPass> {
        let (features, cache) = self.forward_features(x, mode)?;
        let projections = project(self.head_weight(), self.head_bias(), &features)?;
        let embeddings = l2_normalize(&projections);
        Ok(ForwardPass {
            features,
            projections,
            embeddings,
            cache,
        })
    }

    fn check_fresh(&self, cache: &FeatureCache) -> Result<()> {
        ensure!(
            cache.version == self.version,
            State,
            "forward cache is stale: parameters changed since the forward pass"
        );
        Ok(())
    }

    /// Backpropagates a gradient on the pooled features. The head gradients
    /// in the result are zero.
    pub fn backward_features(&self, cache: &FeatureCache, grad: &Array2<f64>) -> Result<Gradients> {
        self.check_fresh(cache)?;
        let (c, b, l) = cache.last_shape;
        ensure!(
            grad.dim() == (b, c),
            Input,
            "feature gradient has shape {:?}, expected {:?}",
            grad.dim(),
            (b, c)
        );
        let mut grads: Vec<Tensor> = self.params.iter().map(Tensor::zeros_like).collect();
        let flat: Vec<f64> = grad.iter().copied().collect();
        let mut d = avg_pool_backward(c, b, l, &flat);
        for (blk, bc) in self.arch.blocks.iter().zip(&cache.blocks).rev() {
            relu_backward_inplace(&bc.output, &mut d);
            let d_sc = match (blk.shortcut, &bc.shortcut) {
                (Some((conv, bn)), Some(sc)) => self.conv_bn_backward(conv, bn, sc, &d, &mut grads),
                _ => d.clone(),
            };
            let mut d_hidden = self.conv_bn_backward(blk.conv2, blk.bn2, &bc.second, &d, &mut grads);
            relu_backward_inplace(&bc.hidden, &mut d_hidden);
            let mut d_in = self.conv_bn_backward(blk.conv1, blk.bn1, &bc.first, &d_hidden, &mut grads);
            debug_assert_eq!(d_in.data.len(), bc.input.data.len());
            d_in.data.iter_mut().zip(&d_sc.data).for_each(|(a, s)| *a += s);
            d = d_in;
        }
        relu_backward_inplace(&cache.stem_out, &mut d);
        let dx = self.conv_bn_backward(self.arch.stem_conv, self.arch.stem_bn, &cache.stem, &d, &mut grads);
        let (bsz, ch, len) = cache.input_shape;
        Ok(Gradients {
            params: grads,
            input: SignalBatch {
                batch: bsz,
                channels: ch,
                len,
                data: dx.to_batch_major(),
            },
        })
    }

    fn conv_bn_backward(&self, conv: ConvSlot, bn: BnSlot, cache: &ConvBn, dy: &Act, grads: &mut [Tensor]) -> Act {
        let (dg, db, dh) = bn_backward(&self.params[bn.gamma].data, &cache.bn, dy);
        add_into(&mut grads[bn.gamma].data, &dg);
        add_into(&mut grads[bn.beta].data, &db);
        let (dw, dx) = conv_backward(&conv.geom, &self.params[conv.weight].data, &cache.conv, &dh);
        add_into(&mut grads[conv.weight].data, &dw);
        dx
    }

    /// Backpropagates a gradient on the normalized embeddings through
    /// normalization, the projection head and the feature path.
    pub fn backward(&self, pass: &ForwardPass, grad_embeddings: &Array2<f64>) -> Result<Gradients> {
        self.check_fresh(&pass.cache)?;
        ensure!(
            grad_embeddings.dim() == pass.embeddings.rows.dim(),
            Input,
            "embedding gradient has shape {:?}, expected {:?}",
            grad_embeddings.dim(),
            pass.embeddings.rows.dim()
        );
        let d_proj = l2_normalize_backward(&pass.embeddings, grad_embeddings);
        let w = self.head_weight();
        let (dp, de) = (self.config.proj_dim, self.config.embed_dim);
        let wmat = ndarray::ArrayView2::from_shape((dp, de), &w.data).map_err(|e| Error::State(e.to_string()))?;
        let d_features = d_proj.dot(&wmat);
        let d_w = d_proj.t().dot(&pass.features);
        let d_b = d_proj.sum_axis(ndarray::Axis(0));
        let mut g = self.backward_features(&pass.cache, &d_features)?;
        g.params[self.arch.head_weight].data = d_w.iter().copied().collect();
        g.params[self.arch.head_bias].data = d_b.to_vec();
        Ok(g)
    }

    /// Folds the batch statistics of a training pass into the running
    /// statistics (exponential average, momentum 0.1, unbiased variance).
    pub fn commit_running_stats(&mut self, cache: &FeatureCache) {
        let mut update = |slot: BnSlot, bn: &BnCache, n: usize| {
            if let Some((mean, var)) = &bn.batch_stats {
                let s = &mut self.stats[slot.stats];
                let unbias = if n > 1 { n as f64 / (n as f64 - 1.0) } else { 1.0 };
                for c in 0..mean.len() {
                    s.mean[c] = (1.0 - BN_MOMENTUM) * s.mean[c] + BN_MOMENTUM * mean[c];
                    s.var[c] = (1.0 - BN_MOMENTUM) * s.var[c] + BN_MOMENTUM * var[c] * unbias;
                }
            }
        };
        let n_of = |cb: &ConvBn| cb.conv.b * cb.conv.out_l;
        update(self.arch.stem_bn, &cache.stem.bn, n_of(&cache.stem));
        for (blk, bc) in self.arch.blocks.iter().zip(&cache.blocks) {
            update(blk.bn1, &bc.first.bn, n_of(&bc.first));
            update(blk.bn2, &bc.second.bn, n_of(&bc.second));
            if let (Some((_, bn)), Some(sc)) = (blk.shortcut, &bc.shortcut) {
                update(bn, &sc.bn, n_of(sc));
            }
        }
    }

    /// Evaluation-mode features for a batch, discarding the cache.
    pub fn features(&self, x: &SignalBatch) -> Result<Array2<f64>> {
        Ok(self.forward_features(x, Mode::Eval)?.0)
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

/// Linear head: `features * W^T + b` with `W` of shape `proj x embed`.
pub fn project(weight: &Tensor, bias: &Tensor, features: &Array2<f64>) -> Result<Array2<f64>> {
    let [dp, de] = weight.shape[..] else {
        return Err(Error::Input(format!("head weight has shape {:?}", weight.shape)));
    };
    ensure!(
        features.ncols() == de && bias.len() == dp,
        Input,
        "projection expects {de} features and {dp} biases, got {} and {}",
        features.ncols(),
        bias.len()
    );
    let w = ndarray::ArrayView2::from_shape((dp, de), &weight.data).map_err(|e| Error::Input(e.to_string()))?;
    let b = ndarray::ArrayView1::from(&bias.data);
    Ok(features.dot(&w.t()) + b)
}

/// Row-normalized matrix with the original norms kept for backpropagation.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub rows: Array2<f64>,
    pub norms: Vec<f64>,
    /// Indices of zero rows, which stay zero.
    pub degenerate: Vec<usize>,
}

/// Scales every row to unit Euclidean norm. Zero rows map to zero and are
/// reported in `degenerate` with a logged warning.
pub fn l2_normalize(rows: &Array2<f64>) -> Normalized {
    let mut out = rows.clone();
    let mut norms = Vec::with_capacity(rows.nrows());
    let mut degenerate = Vec::new();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        norms.push(n);
        if n > 0.0 {
            row.mapv_inplace(|x| x / n);
        } else {
            degenerate.push(i);
        }
    }
    if !degenerate.is_empty() {
        log::warn!("{} zero rows left unnormalized", degenerate.len());
    }
    Normalized {
        rows: out,
        norms,
        degenerate,
    }
}

/// Gradient through [`l2_normalize`]: `(g - y (y . g)) / |x|` per row.
pub fn l2_normalize_backward(n: &Normalized, grad: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(grad.dim());
    for (i, (y, g)) in n.rows.rows().into_iter().zip(grad.rows()).enumerate() {
        if n.norms[i] == 0.0 {
            continue;
        }
        let yg: f64 = y.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
        for j in 0..y.len() {
            out[[i, j]] = (g[j] - y[j] * yg) / n.norms[i];
        }
    }
    out
}
