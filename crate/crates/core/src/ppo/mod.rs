//! Proximal policy optimization with optional mixreg or image augmentation
//! applied to every optimization minibatch.

mod agent;
mod loss;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mix::{augment_batch, AugmentSpec, MixMode, MixPlan, Mixable};
use crate::nn::{apply_stat_updates, l2_penalty, AdamConfig, Graph, Mode, NetworkParams, PolicyValueNet, Tensor};
use crate::rng::Rng;
use crate::rollout::{standardize, RolloutBatch};

pub use agent::{PpoAgent, PpoIteration};
pub use loss::{clip_loss, entropy_bonus, value_loss};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoHyper {
    pub clip: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub rollout_len: usize,
    pub lr: f64,
    pub adam_eps: f64,
    pub grad_clip: f64,
    pub normalize_rewards: bool,
    pub normalize_advantages: bool,
    pub l2_weight: f64,
}

impl Default for PpoHyper {
    fn default() -> Self {
        let adam = AdamConfig::ppo();
        Self {
            clip: 0.2,
            value_coef: 0.5,
            entropy_coef: 0.01,
            epochs: 3,
            minibatches: 8,
            gamma: 0.999,
            gae_lambda: 0.95,
            rollout_len: 256,
            lr: adam.lr,
            adam_eps: adam.eps,
            grad_clip: adam.grad_clip_norm,
            normalize_rewards: true,
            normalize_advantages: true,
            l2_weight: 0.0,
        }
    }
}

impl PpoHyper {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("ppo: {m}")));
        if !(self.clip > 0.0) {
            return bad("clip must be positive");
        }
        if self.value_coef < 0.0 || self.entropy_coef < 0.0 || self.l2_weight < 0.0 {
            return bad("loss coefficients must be nonnegative");
        }
        if self.epochs == 0 || self.minibatches == 0 || self.rollout_len == 0 {
            return bad("epochs, minibatches and rollout_len must be positive");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || !(self.gae_lambda >= 0.0 && self.gae_lambda <= 1.0) {
            return bad("gamma must be in (0, 1] and gae_lambda in [0, 1]");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            eps: self.adam_eps,
            grad_clip_norm: self.grad_clip,
            ..AdamConfig::ppo()
        }
    }
}

/// One optimization minibatch with its PPO supervision.
#[derive(Debug, Clone, PartialEq)]
pub struct Minibatch {
    pub obs: Vec<f64>,
    pub obs_len: usize,
    pub actions: Vec<usize>,
    pub pi_old: Vec<f64>,
    pub v_old: Vec<f64>,
    pub v_targ: Vec<f64>,
    pub adv: Vec<f64>,
}

impl Minibatch {
    pub fn gather(batch: &RolloutBatch, adv: &[f64], idx: &[usize]) -> Self {
        let mut obs = Vec::with_capacity(idx.len() * batch.obs_len);
        for &i in idx {
            obs.extend_from_slice(batch.observation(i));
        }
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Self {
            obs,
            obs_len: batch.obs_len,
            actions: idx.iter().map(|&i| batch.actions[i]).collect(),
            pi_old: pick(&batch.pi_old),
            v_old: pick(&batch.v_old),
            v_targ: pick(&batch.value_targets),
            adv: pick(adv),
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

impl Mixable for Minibatch {
    fn batch_len(&self) -> usize {
        self.len()
    }

    fn mixed(&self, plan: &MixPlan, mode: MixMode) -> Self {
        let sup = |v: &[f64]| match mode {
            MixMode::Full => plan.mix_scalars(v),
            MixMode::ObsOnly => plan.pick(v),
        };
        Self {
            obs: plan.mix_rows(&self.obs, self.obs_len),
            obs_len: self.obs_len,
            actions: plan.pick(&self.actions),
            pi_old: sup(&self.pi_old),
            v_old: sup(&self.v_old),
            v_targ: sup(&self.v_targ),
            adv: sup(&self.adv),
        }
    }
}

/// Loss terms and diagnostics of one minibatch step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub l2: f64,
    pub total_loss: f64,
    pub approx_kl: f64,
    pub clip_frac: f64,
    pub grad_norm: f64,
}

impl PpoStats {
    fn accumulate(&mut self, o: &PpoStats, w: f64) {
        self.policy_loss += w * o.policy_loss;
        self.value_loss += w * o.value_loss;
        self.entropy += w * o.entropy;
        self.l2 += w * o.l2;
        self.total_loss += w * o.total_loss;
        self.approx_kl += w * o.approx_kl;
        self.clip_frac += w * o.clip_frac;
        self.grad_norm += w * o.grad_norm;
    }
}

/// Random streams consumed by an update.
pub struct UpdateRngs<'a> {
    pub shuffle: &'a mut Rng,
    pub mix: &'a mut Rng,
    pub augment: &'a mut Rng,
}

/// Loss and gradients for one (already mixed or augmented) minibatch.
/// Parameters are not modified.
pub fn minibatch_loss(
    net: &PolicyValueNet,
    params: &NetworkParams,
    mb: &Minibatch,
    hyper: &PpoHyper,
) -> Result<(PpoStats, crate::nn::Gradients, Vec<crate::nn::graph::StatUpdate>)> {
    let mut shape = vec![mb.len()];
    shape.extend_from_slice(net.trunk.input_shape());
    let mut g = Graph::with_params(params);
    let x = g.input(Tensor::new(shape, mb.obs.clone())?);
    let out = net.forward(&mut g, x, Mode::Train)?;
    let logp_all = g.log_softmax(out.logits);
    let logp = g.gather(logp_all, mb.actions.clone());
    let (pl, ratio) = clip_loss(&mut g, logp, &mb.pi_old, &mb.adv, hyper.clip);
    let vl = value_loss(&mut g, out.value, &mb.v_old, &mb.v_targ, hyper.clip);
    let ent = entropy_bonus(&mut g, out.logits);
    let vl_s = g.scale(vl, hyper.value_coef);
    let ent_s = g.scale(ent, -hyper.entropy_coef);
    let t = g.add(pl, vl_s);
    let mut total = g.add(t, ent_s);
    let mut l2 = 0.0;
    if hyper.l2_weight > 0.0 {
        let p = l2_penalty(&mut g, hyper.l2_weight);
        l2 = g.value(p).item();
        total = g.add(total, p);
    }
    let total_v = g.value(total).item();
    if !total_v.is_finite() {
        return Err(Error::NonFinite {
            what: "ppo loss",
            detail: format!(
                "policy {} value {} entropy {}",
                g.value(pl).item(),
                g.value(vl).item(),
                g.value(ent).item()
            ),
        });
    }
    let n = mb.len() as f64;
    let ratios = g.data(ratio);
    let clip_frac = ratios.iter().filter(|r| (*r - 1.0).abs() > hyper.clip).count() as f64 / n;
    let approx_kl = ratios.iter().map(|r| -r.ln()).sum::<f64>() / n;
    let stats = PpoStats {
        policy_loss: g.value(pl).item(),
        value_loss: g.value(vl).item(),
        entropy: g.value(ent).item(),
        l2,
        total_loss: total_v,
        approx_kl,
        clip_frac,
        grad_norm: 0.0,
    };
    let grads = g.backward(total)?;
    let updates = g.take_stat_updates();
    Ok((stats, grads, updates))
}

/// Build the optimization minibatch for `idx`: gather, then mix or augment.
pub fn prepare_minibatch(
    batch: &RolloutBatch,
    adv: &[f64],
    idx: &[usize],
    augment: &AugmentSpec,
    obs_size: usize,
    mix_rng: &mut Rng,
    aug_rng: &mut Rng,
) -> Result<(Minibatch, Option<MixPlan>)> {
    let mut mb = Minibatch::gather(batch, adv, idx);
    if let Some(mode) = augment.method.mix_mode() {
        let plan = MixPlan::sample(mb.len(), augment.lambda_source(), mix_rng)?;
        let mixed = mb.mixed(&plan, mode);
        return Ok((mixed, Some(plan)));
    }
    augment_batch(augment, &mut mb.obs, obs_size, aug_rng);
    Ok((mb, None))
}

/// `epochs × minibatches` Adam steps over shuffled minibatches of `batch`.
pub fn ppo_update(
    net: &PolicyValueNet,
    params: &mut NetworkParams,
    batch: &RolloutBatch,
    hyper: &PpoHyper,
    augment: &AugmentSpec,
    rngs: UpdateRngs<'_>,
) -> Result<PpoStats> {
    let n = batch.len();
    if n < hyper.minibatches {
        return Err(Error::BatchTooSmall { needed: hyper.minibatches, got: n });
    }
    let obs_size = net.trunk.input_shape()[1];
    let mut adv = batch.advantages.clone();
    if hyper.normalize_advantages {
        standardize(&mut adv);
    }
    let adam = hyper.adam();
    let mut idx: Vec<usize> = (0..n).collect();
    let mb_size = n / hyper.minibatches;
    let mut stats = PpoStats::default();
    let w = 1.0 / (hyper.epochs * hyper.minibatches) as f64;
    for _ in 0..hyper.epochs {
        idx.shuffle(rngs.shuffle);
        for k in 0..hyper.minibatches {
            let chunk = &idx[k * mb_size..(k + 1) * mb_size];
            let (mb, _) = prepare_minibatch(batch, &adv, chunk, augment, obs_size, rngs.mix, rngs.augment)?;
            let (mut s, grads, updates) = minibatch_loss(net, params, &mb, hyper)?;
            params.zero_grad();
            params.accumulate(&grads);
            let step = params.adam_step(&adam)?;
            apply_stat_updates(params, &updates);
            s.grad_norm = step.grad_norm;
            stats.accumulate(&s, w);
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::TrunkConfig;
    use crate::rng::rng_from_seed;

    #[test]
    fn defaults_match_reference_table() {
        let h = PpoHyper::default();
        assert_eq!((h.epochs, h.minibatches, h.clip, h.value_coef, h.entropy_coef), (3, 8, 0.2, 0.5, 0.01));
        assert_eq!((h.gamma, h.gae_lambda, h.rollout_len, h.lr), (0.999, 0.95, 256, 5e-4));
        assert!(h.validate().is_ok());
        assert!(PpoHyper { clip: 0.0, ..h.clone() }.validate().is_err());
        assert!(PpoHyper { value_coef: -1.0, ..h }.validate().is_err());
    }

    #[test]
    fn mixed_behavior_probability_stays_in_unit_interval() {
        let mb = Minibatch {
            obs: vec![0.0; 4],
            obs_len: 1,
            actions: vec![0, 1, 2, 3],
            pi_old: vec![1e-6, 1.0, 0.5, 0.2],
            v_old: vec![0.0; 4],
            v_targ: vec![0.0; 4],
            adv: vec![0.0; 4],
        };
        let mut rng = rng_from_seed(0);
        for _ in 0..100 {
            let plan = MixPlan::sample(4, crate::mix::LambdaSource::Beta(0.2), &mut rng).unwrap();
            let m = mb.mixed(&plan, MixMode::Full);
            assert!(m.pi_old.iter().all(|p| *p > 0.0 && *p <= 1.0));
        }
    }

    #[test]
    fn zero_objective_leaves_parameters_unchanged() {
        let mut rng = rng_from_seed(1);
        let (net, mut params) = PolicyValueNet::build([3, 8, 8], 3, &TrunkConfig::default(), &mut rng).unwrap();
        let before = params.flat_values();
        let n = 8;
        let batch = RolloutBatch {
            steps: n,
            envs: 1,
            obs_len: 192,
            obs: (0..n * 192).map(|i| (i % 7) as f64 / 7.0).collect(),
            actions: vec![1; n],
            raw_rewards: vec![0.0; n],
            rewards: vec![0.0; n],
            dones: vec![false; n],
            pi_old: vec![0.3; n],
            v_old: vec![0.0; n],
            advantages: vec![0.0; n],
            value_targets: vec![0.0; n],
            bootstrap_values: vec![0.0],
            episodes: vec![],
        };
        let hyper = PpoHyper {
            value_coef: 0.0,
            entropy_coef: 0.0,
            minibatches: 2,
            normalize_advantages: false,
            ..PpoHyper::default()
        };
        let (mut a, mut b, mut c) = (rng_from_seed(2), rng_from_seed(3), rng_from_seed(4));
        let rngs = UpdateRngs { shuffle: &mut a, mix: &mut b, augment: &mut c };
        ppo_update(&net, &mut params, &batch, &hyper, &AugmentSpec::default(), rngs).unwrap();
        assert_eq!(params.flat_values(), before);
    }
}
