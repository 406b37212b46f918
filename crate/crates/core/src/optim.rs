//! AdamW with a linear-warmup, cosine-decay learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::tensor::{check_same_layout, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub peak_lr: f64,
    pub weight_decay: f64,
    pub epsilon: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub warmup_steps: usize,
    pub final_lr: f64,
    pub total_steps: usize,
    /// Apply weight decay to biases and normalization parameters as well.
    pub decay_all: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            peak_lr: 0.01,
            weight_decay: 1e-4,
            epsilon: 1e-8,
            beta1: 0.9,
            beta2: 0.999,
            warmup_steps: 10,
            final_lr: 1e-6,
            total_steps: 100,
            decay_all: false,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.final_lr > 0.0 && self.final_lr <= self.peak_lr,
            Config,
            "need 0 < final_lr <= peak_lr, got final {} peak {}",
            self.final_lr,
            self.peak_lr
        );
        ensure!(
            self.warmup_steps < self.total_steps,
            Config,
            "warmup_steps ({}) must be below total_steps ({})",
            self.warmup_steps,
            self.total_steps
        );
        ensure!(self.weight_decay >= 0.0, Config, "weight_decay must be >= 0");
        ensure!(self.epsilon > 0.0, Config, "epsilon must be > 0");
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            ensure!((0.0..1.0).contains(&b), Config, "{name} must lie in [0, 1), got {b}");
        }
        Ok(())
    }

    /// Copy sized for a run of `total_steps` updates. Warmup is shortened when
    /// the run is too short to hold it.
    pub fn for_total_steps(&self, total_steps: usize) -> OptimConfig {
        OptimConfig {
            total_steps,
            warmup_steps: self.warmup_steps.min(total_steps.saturating_sub(1)),
            ..self.clone()
        }
    }
}

/// Learning rate for optimizer update number `step` (0-based).
pub fn lr_at(step: usize, cfg: &OptimConfig) -> Result<f64> {
    ensure!(
        step <= cfg.total_steps,
        Input,
        "step {step} outside schedule of {} steps",
        cfg.total_steps
    );
    if step < cfg.warmup_steps {
        return Ok(cfg.peak_lr * (step + 1) as f64 / cfg.warmup_steps as f64);
    }
    let span = (cfg.total_steps - cfg.warmup_steps).max(1) as f64;
    let phase = (step - cfg.warmup_steps) as f64 / span;
    Ok(cfg.final_lr + 0.5 * (cfg.peak_lr - cfg.final_lr) * (1.0 + (std::f64::consts::PI * phase).cos()))
}

/// First and second moments for every parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        AdamState {
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            t: 0,
        }
    }
}

/// One AdamW update in place. Decay is decoupled from the adaptive step:
/// `p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)`.
pub fn step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState, cfg: &OptimConfig, lr: f64) -> Result<()> {
    check_same_layout(params, grads)?;
    ensure!(
        state.m.len() == params.len() && state.m.iter().zip(params.iter()).all(|(m, p)| m.len() == p.len()),
        Input,
        "optimizer state does not match the parameter layout"
    );
    ensure!(lr >= 0.0 && lr.is_finite(), Input, "learning rate must be finite and >= 0, got {lr}");
    if let Some(g) = grads.iter().find(|g| !g.is_finite()) {
        return Err(crate::Error::Numeric(format!("non-finite gradient in {}", g.name)));
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let wd = if cfg.decay_all || p.kind.is_weight() { cfg.weight_decay } else { 0.0 };
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..p.data.len() {
            let gj = g.data[j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p.data[j] -= lr * (m_hat / (v_hat.sqrt() + cfg.epsilon) + wd * p.data[j]);
        }
    }
    Ok(())
}
