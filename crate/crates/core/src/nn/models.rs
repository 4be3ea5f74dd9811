//! The two agent networks, both on a scaled-down IMPALA-style trunk.
//!
//! Trunk ("impala-mini"): two blocks of 3×3 conv (16·m and 32·m channels,
//! stride 1, same padding) → optional batch norm → ReLU → 2×2 max-pool,
//! then flatten → dense(256) → ReLU. `m ∈ {1, 2, 4}` scales channel counts.

use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::layers::{LayerSpec, Mode, Sequential};
use super::params::NetworkParams;
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const LATENT_DIM: usize = 256;
pub const NOISY_SIGMA0: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrunkConfig {
    /// Channel multiplier: 1, 2 or 4.
    pub channel_mult: usize,
    pub batch_norm: bool,
    /// Replace the dense layer with a noisy one (σ₀ given).
    pub noisy_sigma0: Option<f64>,
}

impl Default for TrunkConfig {
    fn default() -> Self {
        Self {
            channel_mult: 1,
            batch_norm: false,
            noisy_sigma0: None,
        }
    }
}

impl TrunkConfig {
    pub fn layers(&self, obs_shape: [usize; 3]) -> Result<Vec<LayerSpec>> {
        if ![1, 2, 4].contains(&self.channel_mult) {
            return Err(Error::Config(format!(
                "channel multiplier must be 1, 2 or 4, got {}",
                self.channel_mult
            )));
        }
        let [c, h, w] = obs_shape;
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::Config(format!(
                "observation {h}x{w} must be divisible by 4"
            )));
        }
        let (c1, c2) = (16 * self.channel_mult, 32 * self.channel_mult);
        let mut layers = Vec::new();
        for (cin, cout) in [(c, c1), (c1, c2)] {
            layers.push(LayerSpec::Conv {
                in_channels: cin,
                out_channels: cout,
                kernel: 3,
                stride: 1,
                padding: 1,
            });
            if self.batch_norm {
                layers.push(LayerSpec::BatchNorm { features: cout });
            }
            layers.push(LayerSpec::Relu);
            layers.push(LayerSpec::MaxPool { size: 2 });
        }
        layers.push(LayerSpec::Flatten);
        let flat = c2 * (h / 4) * (w / 4);
        layers.push(match self.noisy_sigma0 {
            Some(sigma0) => LayerSpec::NoisyDense {
                in_features: flat,
                out_features: LATENT_DIM,
                sigma0,
            },
            None => LayerSpec::Dense {
                in_features: flat,
                out_features: LATENT_DIM,
            },
        });
        layers.push(LayerSpec::Relu);
        Ok(layers)
    }
}

/// Actor-critic network: shared trunk, policy logits and scalar value.
#[derive(Debug, Clone)]
pub struct PolicyValueNet {
    pub trunk: Sequential,
    pub policy: Sequential,
    pub value: Sequential,
    pub actions: usize,
}

pub struct PolicyValueVars {
    pub latent: Var,
    pub logits: Var,
    /// Shape `[B]`.
    pub value: Var,
}

impl PolicyValueNet {
    pub fn build(
        obs_shape: [usize; 3],
        actions: usize,
        cfg: &TrunkConfig,
        rng: &mut Rng,
    ) -> Result<(Self, NetworkParams)> {
        let mut store = NetworkParams::new();
        let trunk = Sequential::build(
            "trunk",
            &obs_shape,
            cfg.layers(obs_shape)?,
            1.0,
            &mut store,
            rng,
        )?;
        let policy = Sequential::build(
            "policy",
            &[LATENT_DIM],
            vec![LayerSpec::Dense {
                in_features: LATENT_DIM,
                out_features: actions,
            }],
            0.01,
            &mut store,
            rng,
        )?;
        let value = Sequential::build(
            "value",
            &[LATENT_DIM],
            vec![LayerSpec::Dense {
                in_features: LATENT_DIM,
                out_features: 1,
            }],
            1.0,
            &mut store,
            rng,
        )?;
        Ok((
            Self {
                trunk,
                policy,
                value,
                actions,
            },
            store,
        ))
    }

    pub fn forward(&self, g: &mut Graph<'_>, obs: Var, mode: Mode) -> Result<PolicyValueVars> {
        let latent = self.trunk.forward(g, obs, mode, None)?;
        let logits = self.policy.forward(g, latent, mode, None)?;
        let v = self.value.forward(g, latent, mode, None)?;
        let b = g.shape(v)[0];
        let value = g.reshape(v, vec![b]);
        Ok(PolicyValueVars {
            latent,
            logits,
            value,
        })
    }
}

/// Distributional Q-network: noisy trunk and dueling noisy heads producing
/// per-action logits over return atoms.
#[derive(Debug, Clone)]
pub struct DistQNet {
    pub trunk: Sequential,
    pub value_head: Sequential,
    pub adv_head: Sequential,
    pub actions: usize,
    pub atoms: usize,
}

pub struct DistQVars {
    pub latent: Var,
    /// `[B, A, K]` log-probabilities over atoms.
    pub log_probs: Var,
}

impl DistQNet {
    pub fn build(
        obs_shape: [usize; 3],
        actions: usize,
        atoms: usize,
        cfg: &TrunkConfig,
        rng: &mut Rng,
    ) -> Result<(Self, NetworkParams)> {
        let sigma0 = cfg.noisy_sigma0.unwrap_or(NOISY_SIGMA0);
        let cfg = TrunkConfig {
            noisy_sigma0: Some(sigma0),
            ..*cfg
        };
        let mut store = NetworkParams::new();
        let trunk = Sequential::build(
            "trunk",
            &obs_shape,
            cfg.layers(obs_shape)?,
            1.0,
            &mut store,
            rng,
        )?;
        let value_head = Sequential::build(
            "dist_value",
            &[LATENT_DIM],
            vec![LayerSpec::NoisyDense {
                in_features: LATENT_DIM,
                out_features: atoms,
                sigma0,
            }],
            1.0,
            &mut store,
            rng,
        )?;
        let adv_head = Sequential::build(
            "dist_adv",
            &[LATENT_DIM],
            vec![LayerSpec::NoisyDense {
                in_features: LATENT_DIM,
                out_features: actions * atoms,
                sigma0,
            }],
            1.0,
            &mut store,
            rng,
        )?;
        Ok((
            Self {
                trunk,
                value_head,
                adv_head,
                actions,
                atoms,
            },
            store,
        ))
    }

    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        obs: Var,
        mode: Mode,
        mut noise: Option<&mut Rng>,
    ) -> Result<DistQVars> {
        let latent = self.trunk.forward(g, obs, mode, noise.as_deref_mut())?;
        let v = self.value_head.forward(g, latent, mode, noise.as_deref_mut())?;
        let adv = self.adv_head.forward(g, latent, mode, noise.as_deref_mut())?;
        let logits = g.dueling(v, adv, self.actions);
        let log_probs = g.log_softmax(logits);
        Ok(DistQVars { latent, log_probs })
    }
}
