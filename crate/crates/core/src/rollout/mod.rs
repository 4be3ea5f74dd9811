//! Vectorized trajectory collection, advantage estimation, multi-step
//! returns and reward normalization.

mod normalize;
mod returns;

use rand::Rng as _;

use crate::env::{EpisodeEnd, VecEnv};
use crate::error::{Error, Result};
use crate::nn::{Graph, Mode, NetworkParams, PolicyValueNet, Tensor};
use crate::rng::Rng;

pub use normalize::{RewardNormalizer, RunningMeanStd};
pub use returns::{gae, nstep_return, standardize, NStepReturn};

/// Anything that maps a batch of observations to action probabilities and
/// state values without side effects.
pub trait ActorCritic {
    fn num_actions(&self) -> usize;

    /// `obs` holds `batch` observations back to back. Returns
    /// `(probs [batch × A], values [batch])`.
    fn evaluate(&self, obs: &[f64], batch: usize) -> Result<(Vec<f64>, Vec<f64>)>;
}

/// Read-only view of a policy-value network and its parameters.
#[derive(Clone, Copy)]
pub struct PolicySnapshot<'a> {
    pub net: &'a PolicyValueNet,
    pub params: &'a NetworkParams,
}

impl ActorCritic for PolicySnapshot<'_> {
    fn num_actions(&self) -> usize {
        self.net.actions
    }

    fn evaluate(&self, obs: &[f64], batch: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut shape = vec![batch];
        shape.extend_from_slice(self.net.trunk.input_shape());
        let x = Tensor::new(shape, obs.to_vec())?;
        let mut g = Graph::with_params(self.params);
        let xv = g.input(x);
        let out = self.net.forward(&mut g, xv, Mode::Eval)?;
        let probs = g.softmax(out.logits);
        Ok((g.data(probs).to_vec(), g.data(out.value).to_vec()))
    }
}

/// Draw an index from a discrete distribution.
pub fn sample_categorical(probs: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left u above the cumulative sum: take the last non-zero entry.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// `T × E` transitions in time-major order (`index = t·E + e`).
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    pub steps: usize,
    pub envs: usize,
    pub obs_len: usize,
    pub obs: Vec<f64>,
    pub actions: Vec<usize>,
    pub raw_rewards: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    /// Behavior probability of the taken action.
    pub pi_old: Vec<f64>,
    pub v_old: Vec<f64>,
    pub advantages: Vec<f64>,
    pub value_targets: Vec<f64>,
    pub bootstrap_values: Vec<f64>,
    /// Episodes that finished during collection.
    pub episodes: Vec<EpisodeEnd>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn observation(&self, i: usize) -> &[f64] {
        &self.obs[i * self.obs_len..(i + 1) * self.obs_len]
    }
}

/// Owns the vectorized environment between rollouts so episodes carry over
/// rollout boundaries.
#[derive(Debug, Clone)]
pub struct RolloutCollector {
    pub env: VecEnv,
    pub normalizer: Option<RewardNormalizer>,
    pub gamma: f64,
    pub gae_lambda: f64,
    action_rng: Rng,
}

impl RolloutCollector {
    pub fn new(env: VecEnv, gamma: f64, gae_lambda: f64, normalize_rewards: bool, action_rng: Rng) -> Self {
        let normalizer = normalize_rewards.then(|| RewardNormalizer::new(env.num_envs(), gamma));
        Self {
            env,
            normalizer,
            gamma,
            gae_lambda,
            action_rng,
        }
    }

    pub fn collect(&mut self, policy: &impl ActorCritic, steps: usize) -> Result<RolloutBatch> {
        if steps == 0 {
            return Err(Error::Config("rollout length must be at least 1".into()));
        }
        let e = self.env.num_envs();
        let obs_len = self.env.obs_len();
        let a_n = policy.num_actions();
        let n = steps * e;
        let mut b = RolloutBatch {
            steps,
            envs: e,
            obs_len,
            obs: Vec::with_capacity(n * obs_len),
            actions: Vec::with_capacity(n),
            raw_rewards: Vec::with_capacity(n),
            rewards: Vec::with_capacity(n),
            dones: Vec::with_capacity(n),
            pi_old: Vec::with_capacity(n),
            v_old: Vec::with_capacity(n),
            advantages: Vec::new(),
            value_targets: Vec::new(),
            bootstrap_values: Vec::new(),
            episodes: Vec::new(),
        };
        for _ in 0..steps {
            let obs = self.env.observations();
            let (probs, values) = policy.evaluate(&obs, e)?;
            let actions: Vec<usize> = (0..e)
                .map(|k| sample_categorical(&probs[k * a_n..(k + 1) * a_n], &mut self.action_rng))
                .collect();
            for (k, &a) in actions.iter().enumerate() {
                b.pi_old.push(probs[k * a_n + a]);
            }
            let st = self.env.step(&actions)?;
            let scaled = match &mut self.normalizer {
                Some(norm) => norm.normalize(&st.rewards, &st.dones),
                None => st.rewards.clone(),
            };
            b.obs.extend_from_slice(&obs);
            b.actions.extend_from_slice(&actions);
            b.v_old.extend_from_slice(&values);
            b.raw_rewards.extend_from_slice(&st.rewards);
            b.rewards.extend_from_slice(&scaled);
            b.dones.extend_from_slice(&st.dones);
            b.episodes.extend(st.ended);
        }
        let (_, boot) = policy.evaluate(&self.env.observations(), e)?;
        let (adv, targ) = gae(&b.rewards, &b.v_old, &b.dones, &boot, self.gamma, self.gae_lambda)?;
        b.advantages = adv;
        b.value_targets = targ;
        b.bootstrap_values = boot;
        Ok(b)
    }
}
