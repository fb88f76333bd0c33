//! First-order optimizers: Adam and plain gradient descent.

use thiserror::Error;

use crate::model::NamedTensors;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimError {
    #[error("no gradient for parameter `{0}`")]
    MissingGradient(String),
    #[error("gradient for `{name}` has shape {found:?}, parameter has {expected:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
}

fn check_grads(params: &NamedTensors, grads: &NamedTensors) -> Result<(), OptimError> {
    for (name, p) in params {
        let g = grads.get(name).ok_or_else(|| OptimError::MissingGradient(name.clone()))?;
        if g.shape() != p.shape() {
            return Err(OptimError::ShapeMismatch {
                name: name.clone(),
                expected: p.shape().to_vec(),
                found: g.shape().to_vec(),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Per-parameter moment estimates. Moments are created as zeros the first
/// time a parameter is seen.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: NamedTensors,
    v: NamedTensors,
    t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, m: NamedTensors::new(), v: NamedTensors::new(), t: 0 }
    }

    pub fn with_lr(lr: f64) -> Self {
        Self::new(AdamConfig { lr, ..AdamConfig::default() })
    }

    /// Number of steps taken so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, name: &str) -> Option<&Tensor> {
        self.m.get(name)
    }

    pub fn second_moment(&self, name: &str) -> Option<&Tensor> {
        self.v.get(name)
    }

    /// One bias-corrected Adam update of every parameter:
    ///
    /// ```text
    /// m ← β1·m + (1 − β1)·g
    /// v ← β2·v + (1 − β2)·g²
    /// θ ← θ − lr · m̂ / (√v̂ + ε),   m̂ = m / (1 − β1ᵗ),  v̂ = v / (1 − β2ᵗ)
    /// ```
    pub fn step(&mut self, params: &mut NamedTensors, grads: &NamedTensors) -> Result<(), OptimError> {
        check_grads(params, grads)?;
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (name, p) in params.iter_mut() {
            let g = &grads[name];
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
            let it = p.values_mut().iter_mut().zip(m.values_mut()).zip(v.values_mut()).zip(g.values());
            for (((theta, m), v), &g) in it {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *theta -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// `θ ← θ − lr·g`.
pub fn sgd_step(lr: f64, params: &mut NamedTensors, grads: &NamedTensors) -> Result<(), OptimError> {
    check_grads(params, grads)?;
    for (name, p) in params.iter_mut() {
        for (theta, g) in p.values_mut().iter_mut().zip(grads[name].values()) {
            *theta -= lr * g;
        }
    }
    Ok(())
}

/// Global L2 norm over every gradient element, in name order.
pub fn grad_norm(grads: &NamedTensors) -> f64 {
    grads.values().flat_map(|g| g.values()).fold(0.0, |acc, v| acc + v * v).sqrt()
}

/// Rescales all gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut NamedTensors, max_norm: f64) -> f64 {
    let norm = grad_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.values_mut() {
            g.values_mut().iter_mut().for_each(|v| *v *= scale);
        }
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    /// Plain gradient descent.
    Gd,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "gd" | "sgd" => Ok(OptimizerKind::Gd),
            _ => Err(format!("unknown optimizer `{s}` (expected adam or gd)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Adam(AdamState),
    Gd { lr: f64 },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(AdamState::with_lr(lr)),
            OptimizerKind::Gd => Optimizer::Gd { lr },
        }
    }

    pub fn step(&mut self, params: &mut NamedTensors, grads: &NamedTensors) -> Result<(), OptimError> {
        match self {
            Optimizer::Adam(state) => state.step(params, grads),
            Optimizer::Gd { lr } => sgd_step(*lr, params, grads),
        }
    }
}
