//! Named parameter store with Adam moment buffers.

use rand_distr::{Distribution, StandardNormal};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// What role a parameter plays; decides optimizer and regularizer treatment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Dense weight matrix or convolution kernel (ℓ₂-regularized).
    Weight,
    Bias,
    /// Batch-norm scale/shift.
    NormAffine,
    /// Noisy-layer σ parameters.
    NoiseScale,
    /// Batch-norm running statistics; not trained.
    RunningStat,
}

impl ParamKind {
    pub fn trainable(self) -> bool {
        self != ParamKind::RunningStat
    }
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Gradient buffers produced by a backward pass, keyed by parameter.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    pub(crate) entries: Vec<(ParamId, Vec<f64>)>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.entries
            .iter()
            .find(|(p, _)| *p == id)
            .map(|(_, g)| g.as_slice())
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global ℓ₂ gradient-norm bound applied before the moment update.
    pub grad_clip_norm: f64,
}

impl AdamConfig {
    /// PPO column of the hyperparameter table.
    pub fn ppo() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-5,
            grad_clip_norm: 0.5,
        }
    }

    /// Rainbow column of the hyperparameter table.
    pub fn rainbow() -> Self {
        Self {
            lr: 2.5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1.5e-4,
            grad_clip_norm: 10.0,
        }
    }
}

/// Statistics of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub grad_norm: f64,
    pub clipped: bool,
}

#[derive(Debug, Clone, Default)]
pub struct NetworkParams {
    params: Vec<Param>,
    adam_t: u64,
}

impl NetworkParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            self.find(&name).is_none(),
            "duplicate parameter name `{name}`"
        );
        let n = value.len();
        self.params.push(Param {
            name,
            kind,
            value,
            m: vec![0.0; n],
            v: vec![0.0; n],
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.find(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn num_trainable(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.kind.trainable())
            .map(|p| p.value.len())
            .sum()
    }

    pub fn adam_steps(&self) -> u64 {
        self.adam_t
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.value.zero_grad();
        }
    }

    /// Add gradient buffers into the parameters' gradient slots.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (id, g) in &grads.entries {
            let dst = self.params[id.0].value.grad_mut();
            for (d, s) in dst.iter_mut().zip(g) {
                *d += s;
            }
        }
    }

    pub fn grad(&self, id: ParamId) -> Option<&[f64]> {
        self.params[id.0].value.grad()
    }

    /// Global ℓ₂ norm over trainable gradients.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter(|p| p.kind.trainable())
            .filter_map(|p| p.value.grad())
            .flat_map(|g| g.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Scale gradients so that the global norm is at most `max_norm`.
    /// Identity when the norm is already within bound.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> StepStats {
        let norm = self.grad_norm();
        let clipped = norm > max_norm;
        if clipped {
            let scale = max_norm / norm;
            for p in self.params.iter_mut().filter(|p| p.kind.trainable()) {
                if p.value.grad().is_some() {
                    p.value.grad_mut().iter_mut().for_each(|g| *g *= scale);
                }
            }
        }
        StepStats {
            grad_norm: norm,
            clipped,
        }
    }

    /// One Adam step with global-norm clipping and bias correction.
    /// Gradients are consumed (reset to zero) afterwards.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<StepStats> {
        for p in &self.params {
            if let Some(g) = p.value.grad() {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteGradient(p.name.clone()));
                }
            }
        }
        let stats = self.clip_grad_norm(cfg.grad_clip_norm);
        self.adam_t += 1;
        let t = self.adam_t as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for p in self.params.iter_mut().filter(|p| p.kind.trainable()) {
            let Some(g) = p.value.take_grad() else {
                continue;
            };
            let data = p.value.data_mut();
            for i in 0..data.len() {
                let gi = g[i];
                p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * gi;
                p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * gi * gi;
                let mhat = p.m[i] / bc1;
                let vhat = p.v[i] / bc2;
                data[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
            }
        }
        Ok(stats)
    }

    /// Copy values (not optimizer state) from `other`; used for target sync.
    pub fn copy_values_from(&mut self, other: &NetworkParams) {
        assert_eq!(self.params.len(), other.params.len());
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            debug_assert_eq!(dst.name, src.name);
            dst.value
                .data_mut()
                .copy_from_slice(src.value.data());
        }
    }

    /// Values of every parameter, concatenated in insertion order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.params
            .iter()
            .flat_map(|p| p.value.data().iter().copied())
            .collect()
    }

    pub(crate) fn set_stat(&mut self, id: ParamId, values: &[f64]) {
        self.params[id.0].value.data_mut().copy_from_slice(values);
    }
}

/// Orthogonal initialization of a `rows × cols` matrix, scaled by `gain`.
pub fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut Rng) -> Vec<f64> {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    // Columns of a tall Gaussian matrix, orthonormalized by modified Gram-Schmidt.
    let mut q: Vec<Vec<f64>> = (0..short)
        .map(|_| (0..tall).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    for j in 0..short {
        // Two passes for numerical stability.
        for _ in 0..2 {
            for i in 0..j {
                let (head, tail) = q.split_at_mut(j);
                let dot: f64 = head[i].iter().zip(&tail[0]).map(|(a, b)| a * b).sum();
                for (t, h) in tail[0].iter_mut().zip(&head[i]) {
                    *t -= dot * h;
                }
            }
        }
        let norm = q[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            // Degenerate draw; start over with fresh samples.
            return orthogonal(rows, cols, gain, rng);
        }
        q[j].iter_mut().for_each(|v| *v /= norm);
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = gain
                * if rows >= cols {
                    q[c][r]
                } else {
                    q[r][c]
                };
        }
    }
    out
}
