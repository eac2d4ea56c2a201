//! Linear-sigmoid value head over pooled ambient vectors, regressed onto
//! shaping potentials with a mean-squared error.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::AmbientVector;

pub const DEFAULT_VALUE_LR: f64 = 0.1;
pub const DEFAULT_VALUE_LOSS_WEIGHT: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValueError {
    #[error("dimension mismatch: head has {expected}, input has {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("value batch is empty")]
    EmptyBatch,
    #[error("batch has {inputs} inputs but {targets} targets")]
    LengthMismatch { inputs: usize, targets: usize },
    #[error("target {0} outside [0, 1]")]
    TargetOutOfRange(f64),
    #[error("non-finite parameter or gradient")]
    NonFinite,
}

/// Anything that maps a pooled vector to a value estimate in `(0, 1)`.
pub trait ValueModel: Send + Sync {
    fn predict_value(&self, pooled: &AmbientVector) -> Result<f64, ValueError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueHead {
    pub weights: Vec<f64>,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueBatch {
    inputs: Vec<AmbientVector>,
    targets: Vec<f64>,
}

impl ValueBatch {
    pub fn new(inputs: Vec<AmbientVector>, targets: Vec<f64>) -> Result<Self, ValueError> {
        if inputs.len() != targets.len() {
            return Err(ValueError::LengthMismatch { inputs: inputs.len(), targets: targets.len() });
        }
        if inputs.is_empty() {
            return Err(ValueError::EmptyBatch);
        }
        if let Some(&t) = targets.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(ValueError::TargetOutOfRange(t));
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &[AmbientVector] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueGrad {
    pub weights: Vec<f64>,
    pub bias: f64,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl ValueHead {
    /// All-zero parameters: predicts 0.5 everywhere.
    pub fn zeros(dim: usize) -> Self {
        Self { weights: vec![0.0; dim], bias: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    fn logit(&self, h: &AmbientVector) -> Result<f64, ValueError> {
        if h.dim() != self.dim() {
            return Err(ValueError::DimensionMismatch { expected: self.dim(), found: h.dim() });
        }
        Ok(self.weights.iter().zip(h.as_slice()).map(|(w, x)| w * x).sum::<f64>() + self.bias)
    }

    /// `sigmoid(w . h + b)`. The result is clamped away from {0, 1} so it
    /// stays strictly inside the open interval even when the logit saturates.
    pub fn predict(&self, h: &AmbientVector) -> Result<f64, ValueError> {
        let p = sigmoid(self.logit(h)?);
        Ok(p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0))
    }

    pub fn value_loss(&self, batch: &ValueBatch) -> Result<f64, ValueError> {
        let mut sum = 0.0;
        for (h, t) in batch.inputs.iter().zip(&batch.targets) {
            let e = self.predict(h)? - t;
            sum += e * e;
        }
        Ok(sum / batch.len() as f64)
    }

    /// Exact gradient of [`ValueHead::value_loss`]:
    /// `mean(2 (f - V) f (1 - f) h)` for the weights, same without `h` for the bias.
    pub fn value_grad(&self, batch: &ValueBatch) -> Result<ValueGrad, ValueError> {
        let mut gw = vec![0.0; self.dim()];
        let mut gb = 0.0;
        for (h, t) in batch.inputs.iter().zip(&batch.targets) {
            let f = sigmoid(self.logit(h)?);
            let coeff = 2.0 * (f - t) * f * (1.0 - f);
            gb += coeff;
            for (g, x) in gw.iter_mut().zip(h.as_slice()) {
                *g += coeff * x;
            }
        }
        let n = batch.len() as f64;
        gw.iter_mut().for_each(|g| *g /= n);
        Ok(ValueGrad { weights: gw, bias: gb / n })
    }

    pub fn sgd_step(&self, grad: &ValueGrad, lr: f64) -> Result<ValueHead, ValueError> {
        if grad.weights.len() != self.dim() {
            return Err(ValueError::DimensionMismatch { expected: self.dim(), found: grad.weights.len() });
        }
        if !grad.bias.is_finite() || grad.weights.iter().any(|g| !g.is_finite()) {
            return Err(ValueError::NonFinite);
        }
        Ok(ValueHead {
            weights: self.weights.iter().zip(&grad.weights).map(|(w, g)| w - lr * g).collect(),
            bias: self.bias - lr * grad.bias,
        })
    }

    /// Full-batch gradient descent; returns the trained head and the loss
    /// recorded before every step.
    pub fn fit(&self, batch: &ValueBatch, lr: f64, steps: usize) -> Result<(ValueHead, Vec<f64>), ValueError> {
        let mut head = self.clone();
        let mut losses = Vec::with_capacity(steps);
        for _ in 0..steps {
            losses.push(head.value_loss(batch)?);
            let g = head.value_grad(batch)?;
            head = head.sgd_step(&g, lr)?;
        }
        Ok((head, losses))
    }
}

impl ValueModel for ValueHead {
    fn predict_value(&self, pooled: &AmbientVector) -> Result<f64, ValueError> {
        self.predict(pooled)
    }
}

/// `L = L_policy + lambda * L_value`.
pub fn joint_loss(policy_loss: f64, value_loss: f64, lambda: f64) -> f64 {
    policy_loss + lambda * value_loss
}
