use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Role of a trainable tensor. Weight decay is applied to `Weight` only unless
/// the optimizer is told otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Weight,
    Bias,
    NormScale,
    NormShift,
}

impl ParamKind {
    pub fn is_weight(self) -> bool {
        matches!(self, ParamKind::Weight)
    }
}

/// A flat, named tensor of 64-bit values in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(name: impl Into<String>, shape: &[usize], kind: ParamKind) -> Self {
        let len = shape.iter().product();
        Tensor {
            name: name.into(),
            shape: shape.to_vec(),
            kind,
            data: vec![0.0; len],
        }
    }

    pub fn filled(name: impl Into<String>, shape: &[usize], kind: ParamKind, value: f64) -> Self {
        let mut t = Self::zeros(name, shape, kind);
        t.data.iter_mut().for_each(|x| *x = value);
        t
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Zero tensor with the same name, shape and kind.
    pub fn zeros_like(&self) -> Self {
        Tensor::zeros(self.name.clone(), &self.shape, self.kind)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Checks that two tensor lists agree name-by-name and shape-by-shape.
pub fn check_same_layout(a: &[Tensor], b: &[Tensor]) -> Result<()> {
    ensure!(
        a.len() == b.len(),
        Input,
        "tensor count mismatch: {} vs {}",
        a.len(),
        b.len()
    );
    for (x, y) in a.iter().zip(b) {
        ensure!(
            x.shape == y.shape && x.data.len() == y.data.len(),
            Input,
            "shape mismatch for {}: {:?} vs {:?}",
            x.name,
            x.shape,
            y.shape
        );
    }
    Ok(())
}

/// Sum of squares over every element of every tensor, square-rooted.
pub fn global_norm(tensors: &[Tensor]) -> f64 {
    tensors
        .iter()
        .flat_map(|t| t.data.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}
