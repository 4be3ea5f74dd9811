//! Distributional Q-learning with n-step returns, double-Q bootstrap
//! actions, dueling noisy heads and prioritized replay, optionally trained on
//! mixed transitions.

mod replay;
mod support;
mod tree;

use serde::{Deserialize, Serialize};

use crate::env::{EpisodeEnd, VecEnv};
use crate::error::{Error, Result};
use crate::mix::{augment_batch, AugmentSpec, MixMode, MixPlan};
use crate::nn::graph::StatUpdate;
use crate::nn::{
    apply_stat_updates, l2_penalty, AdamConfig, DistQNet, Graph, Gradients, Mode, NetworkParams, Tensor, TrunkConfig,
    Var,
};
use crate::rng::{Rng, SeedStreams};

pub use replay::{ReplayBuffer, ReplayConfig, Sampled};
pub use support::Support;
pub use tree::SumMinTree;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RainbowHyper {
    pub gamma: f64,
    pub lr: f64,
    pub adam_eps: f64,
    pub grad_clip: f64,
    pub atoms: usize,
    /// Support bounds; default to `[0, R_max]` of the game.
    pub v_min: Option<f64>,
    pub v_max: Option<f64>,
    pub n_step: usize,
    pub omega: f64,
    pub beta: f64,
    pub eps_prio: f64,
    pub replay_capacity: usize,
    pub min_history: usize,
    /// Target network sync period, in updates.
    pub target_period: u64,
    pub batch_size: usize,
    /// Vector steps between updates.
    pub update_every: usize,
    pub sigma0: f64,
    pub l2_weight: f64,
}

impl Default for RainbowHyper {
    fn default() -> Self {
        let adam = AdamConfig::rainbow();
        Self {
            gamma: 0.999,
            lr: adam.lr,
            adam_eps: adam.eps,
            grad_clip: adam.grad_clip_norm,
            atoms: 51,
            v_min: None,
            v_max: None,
            n_step: 3,
            omega: 0.5,
            beta: 0.4,
            eps_prio: 1e-6,
            replay_capacity: 50_000,
            min_history: 2_000,
            target_period: 1_000,
            batch_size: 64,
            update_every: 1,
            sigma0: 0.5,
            l2_weight: 0.0,
        }
    }
}

impl RainbowHyper {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("rainbow: {m}")));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must be in (0, 1]");
        }
        if self.atoms < 2 || self.n_step == 0 || self.batch_size < 2 || self.update_every == 0 {
            return bad("atoms ≥ 2, n_step ≥ 1, batch_size ≥ 2 and update_every ≥ 1 required");
        }
        if self.target_period == 0 || !(self.lr > 0.0) || !(self.sigma0 > 0.0) || self.l2_weight < 0.0 {
            return bad("target_period, lr and sigma0 must be positive, l2_weight nonnegative");
        }
        if self.min_history > self.replay_capacity {
            return bad("min_history exceeds replay capacity");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            eps: self.adam_eps,
            grad_clip_norm: self.grad_clip,
            ..AdamConfig::rainbow()
        }
    }

    pub fn support(&self, default_max: f64) -> Result<Support> {
        Support::new(self.v_min.unwrap_or(0.0), self.v_max.unwrap_or(default_max), self.atoms)
    }
}

/// A decoded replay sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBatch {
    pub obs: Vec<f64>,
    pub next_obs: Vec<f64>,
    pub obs_len: usize,
    pub actions: Vec<usize>,
    pub returns: Vec<f64>,
    pub discounts: Vec<f64>,
    pub weights: Vec<f64>,
    /// `(record, stamp)` for priority updates.
    pub records: Vec<(usize, u64)>,
}

impl ReplayBatch {
    pub fn from_samples(samples: &[Sampled]) -> Self {
        let obs_len = samples.first().map_or(0, |s| s.obs.len());
        let decode = |v: &[u8]| v.iter().map(|&b| f64::from(b) / 255.0).collect::<Vec<_>>();
        Self {
            obs: samples.iter().flat_map(|s| decode(&s.obs)).collect(),
            next_obs: samples.iter().flat_map(|s| decode(&s.next_obs)).collect(),
            obs_len,
            actions: samples.iter().map(|s| s.action).collect(),
            returns: samples.iter().map(|s| s.nstep.ret).collect(),
            discounts: samples.iter().map(|s| s.nstep.discount).collect(),
            weights: samples.iter().map(|s| s.weight).collect(),
            records: samples.iter().map(|s| (s.record, s.stamp)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

fn obs_tensor(net: &DistQNet, obs: &[f64]) -> Result<Tensor> {
    let shape = net.trunk.input_shape();
    let len: usize = shape.iter().product();
    let mut s = vec![obs.len() / len];
    s.extend_from_slice(shape);
    Tensor::new(s, obs.to_vec())
}

/// Atom probabilities `[B, A, K]` for a batch of observations. `noise`
/// selects a noisy (train-mode) pass; batch-norm statistics are not updated.
pub fn atom_probs(net: &DistQNet, params: &NetworkParams, obs: &[f64], noise: Option<&mut Rng>) -> Result<Vec<f64>> {
    let mut g = Graph::with_params(params);
    let x = g.input(obs_tensor(net, obs)?);
    let mode = if noise.is_some() { Mode::Train } else { Mode::Eval };
    let out = net.forward(&mut g, x, mode, noise)?;
    Ok(g.data(out.log_probs).iter().map(|l| l.exp()).collect())
}

/// `Q(s, a) = zᵀp(s, a)` for every row of `[B, A, K]` probabilities.
pub fn q_values(support: &Support, probs: &[f64]) -> Vec<f64> {
    probs.chunks(support.len()).map(|p| support.mean(p)).collect()
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Greedy actions per row of `[B, A]` Q-values.
pub fn greedy(q: &[f64], actions: usize) -> Vec<usize> {
    q.chunks(actions).map(argmax).collect()
}

/// Projected target masses `[B, K]`.
///
/// `next_probs` are target-network masses `[B, A, K]` at the bootstrap states
/// and `a_star` the online network's bootstrap actions. With a plan, the
/// target of element `i` uses the interpolated return, the dominant side's
/// bootstrap action and discount, and interpolated bootstrap masses
/// (`ObsOnly` takes the dominant side's unmixed target instead).
pub fn target_distribution(
    support: &Support,
    actions: usize,
    returns: &[f64],
    discounts: &[f64],
    next_probs: &[f64],
    a_star: &[usize],
    plan: Option<(&MixPlan, MixMode)>,
) -> Vec<f64> {
    let k = support.len();
    let b = returns.len();
    let row = |i: usize, a: usize| &next_probs[(i * actions + a) * k..(i * actions + a + 1) * k];
    let mut out = Vec::with_capacity(b * k);
    for i in 0..b {
        let m = match plan {
            None => support.project(returns[i], discounts[i], row(i, a_star[i])),
            Some((plan, MixMode::ObsOnly)) => {
                let d = plan.dominant(i);
                support.project(returns[d], discounts[d], row(d, a_star[d]))
            }
            Some((plan, MixMode::Full)) => {
                let (l, j) = (plan.lambdas[i], plan.partners[i]);
                let d = plan.dominant(i);
                let a = a_star[d];
                let p: Vec<f64> = row(i, a).iter().zip(row(j, a)).map(|(x, y)| l * x + (1.0 - l) * y).collect();
                let r = l * returns[i] + (1.0 - l) * returns[j];
                support.project(r, discounts[d], &p)
            }
        };
        out.extend(m);
    }
    out
}

/// Importance-weighted cross-entropy of predicted atom log-probabilities
/// (`[B, A, K]`, taken at `actions`) against fixed target masses. Returns the
/// loss node and the per-sample cross-entropies.
pub fn kl_loss(g: &mut Graph<'_>, log_probs: Var, actions: &[usize], targets: &[f64], weights: &[f64]) -> (Var, Vec<f64>) {
    let b = actions.len();
    let k = targets.len() / b;
    let lp = g.gather(log_probs, actions.to_vec());
    let m = g.input(Tensor::new(vec![b, k], targets.to_vec()).expect("target shape"));
    let prod = g.mul(lp, m);
    let row = g.sum_last(prod);
    let per_sample: Vec<f64> = g.data(row).iter().map(|v| -v).collect();
    let w = g.constant_vec(weights.to_vec());
    let weighted = g.mul(row, w);
    let mean = g.mean(weighted);
    (g.scale(mean, -1.0), per_sample)
}


#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RainbowStats {
    pub loss: f64,
    pub mean_kl: f64,
    pub max_kl: f64,
    pub l2: f64,
    pub grad_norm: f64,
    pub mean_q: f64,
}

pub struct LearnRngs<'a> {
    pub noise: &'a mut Rng,
    pub mix: &'a mut Rng,
    pub augment: &'a mut Rng,
}

/// Everything the gradient step needs, computed from an unmixed batch.
pub struct PreparedUpdate {
    pub obs: Vec<f64>,
    pub actions: Vec<usize>,
    pub targets: Vec<f64>,
    pub weights: Vec<f64>,
    pub plan: Option<MixPlan>,
    pub mean_q: f64,
}

/// Bootstrap actions (online network) and target masses (target network),
/// then mixing or augmentation of the batch.
#[allow(clippy::too_many_arguments)]
pub fn prepare_update(
    net: &DistQNet,
    online: &NetworkParams,
    target: &NetworkParams,
    support: &Support,
    batch: &ReplayBatch,
    augment: &AugmentSpec,
    obs_size: usize,
    rngs: &mut LearnRngs<'_>,
) -> Result<PreparedUpdate> {
    let a_n = net.actions;
    let online_next = atom_probs(net, online, &batch.next_obs, Some(rngs.noise))?;
    let q_next = q_values(support, &online_next);
    let a_star = greedy(&q_next, a_n);
    let target_next = atom_probs(net, target, &batch.next_obs, Some(rngs.noise))?;
    let mean_q = q_next.iter().sum::<f64>() / q_next.len() as f64;
    if let Some(mode) = augment.method.mix_mode() {
        let plan = MixPlan::sample(batch.len(), augment.lambda_source(), rngs.mix)?;
        let targets = target_distribution(
            support,
            a_n,
            &batch.returns,
            &batch.discounts,
            &target_next,
            &a_star,
            Some((&plan, mode)),
        );
        return Ok(PreparedUpdate {
            obs: plan.mix_rows(&batch.obs, batch.obs_len),
            actions: plan.pick(&batch.actions),
            targets,
            weights: batch.weights.clone(),
            plan: Some(plan),
            mean_q,
        });
    }
    let targets = target_distribution(support, a_n, &batch.returns, &batch.discounts, &target_next, &a_star, None);
    let mut obs = batch.obs.clone();
    augment_batch(augment, &mut obs, obs_size, rngs.augment);
    Ok(PreparedUpdate {
        obs,
        actions: batch.actions.clone(),
        targets,
        weights: batch.weights.clone(),
        plan: None,
        mean_q,
    })
}

/// Loss, gradients and per-sample KL of a prepared update.
pub fn update_loss(
    net: &DistQNet,
    online: &NetworkParams,
    prep: &PreparedUpdate,
    l2_weight: f64,
    noise: &mut Rng,
) -> Result<(RainbowStats, Vec<f64>, Gradients, Vec<StatUpdate>)> {
    let mut g = Graph::with_params(online);
    let x = g.input(obs_tensor(net, &prep.obs)?);
    let out = net.forward(&mut g, x, Mode::Train, Some(noise))?;
    let (mut loss, kl) = kl_loss(&mut g, out.log_probs, &prep.actions, &prep.targets, &prep.weights);
    let mut l2 = 0.0;
    if l2_weight > 0.0 {
        let p = l2_penalty(&mut g, l2_weight);
        l2 = g.value(p).item();
        loss = g.add(loss, p);
    }
    let lv = g.value(loss).item();
    if !lv.is_finite() || kl.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "rainbow KL",
            detail: format!("loss {lv}, max kl {:?}", kl.iter().copied().fold(f64::NAN, f64::max)),
        });
    }
    let grads = g.backward(loss)?;
    let updates = g.take_stat_updates();
    let stats = RainbowStats {
        loss: lv,
        mean_kl: kl.iter().sum::<f64>() / kl.len() as f64,
        max_kl: kl.iter().copied().fold(0.0, f64::max),
        l2,
        grad_norm: 0.0,
        mean_q: prep.mean_q,
    };
    Ok((stats, kl, grads, updates))
}

/// One learner step on `batch`: returns statistics and per-sample KL (the
/// new priorities of the primary records).
#[allow(clippy::too_many_arguments)]
pub fn kl_update(
    net: &DistQNet,
    online: &mut NetworkParams,
    target: &NetworkParams,
    support: &Support,
    batch: &ReplayBatch,
    hyper: &RainbowHyper,
    augment: &AugmentSpec,
    mut rngs: LearnRngs<'_>,
) -> Result<(RainbowStats, Vec<f64>)> {
    let obs_size = net.trunk.input_shape()[1];
    let prep = prepare_update(net, online, target, support, batch, augment, obs_size, &mut rngs)?;
    let (mut stats, kl, grads, updates) = update_loss(net, online, &prep, hyper.l2_weight, rngs.noise)?;
    online.zero_grad();
    online.accumulate(&grads);
    let step = online.adam_step(&hyper.adam())?;
    apply_stat_updates(online, &updates);
    stats.grad_norm = step.grad_norm;
    Ok((stats, kl))
}

/// Outcome of one vector step of the agent.
#[derive(Debug, Clone, PartialEq)]
pub struct RainbowStep {
    pub episodes: Vec<EpisodeEnd>,
    pub update: Option<RainbowStats>,
    pub synced_target: bool,
}

/// Acting and learning interleaved on one thread.
pub struct RainbowAgent {
    pub net: DistQNet,
    pub online: NetworkParams,
    pub target: NetworkParams,
    pub support: Support,
    pub replay: ReplayBuffer,
    pub hyper: RainbowHyper,
    pub augment: AugmentSpec,
    pub env: VecEnv,
    pub vec_steps: u64,
    pub updates: u64,
    pub target_syncs: u64,
    act_noise: Rng,
    learn_noise: Rng,
    sample_rng: Rng,
    mix_rng: Rng,
    aug_rng: Rng,
}

impl RainbowAgent {
    pub fn new(env: VecEnv, trunk: &TrunkConfig, hyper: RainbowHyper, augment: AugmentSpec, streams: &SeedStreams) -> Result<Self> {
        hyper.validate()?;
        let cfg = env.config().clone();
        augment.validate(cfg.obs_size)?;
        let support = hyper.support(cfg.game.max_return(&cfg))?;
        let trunk = TrunkConfig {
            noisy_sigma0: Some(hyper.sigma0),
            ..*trunk
        };
        let mut init = streams.stream("init");
        let (net, online) = DistQNet::build(cfg.obs_shape(), crate::env::NUM_ACTIONS, hyper.atoms, &trunk, &mut init)?;
        let mut target = online.clone();
        target.copy_values_from(&online);
        let replay = ReplayBuffer::new(
            ReplayConfig {
                capacity: hyper.replay_capacity,
                n_step: hyper.n_step,
                gamma: hyper.gamma,
                omega: hyper.omega,
                beta: hyper.beta,
                eps_prio: hyper.eps_prio,
            },
            env.num_envs(),
            cfg.obs_len(),
        )?;
        Ok(Self {
            net,
            online,
            target,
            support,
            replay,
            hyper,
            augment,
            env,
            vec_steps: 0,
            updates: 0,
            target_syncs: 0,
            act_noise: streams.stream("act-noise"),
            learn_noise: streams.stream("learn-noise"),
            sample_rng: streams.stream("replay"),
            mix_rng: streams.stream("mix"),
            aug_rng: streams.stream("augment"),
        })
    }

    pub fn timesteps(&self) -> u64 {
        self.vec_steps * self.env.num_envs() as u64
    }

    /// Greedy actions under a fresh noise sample (no ε-exploration).
    pub fn act(&mut self, obs: &[f64]) -> Result<Vec<usize>> {
        let p = atom_probs(&self.net, &self.online, obs, Some(&mut self.act_noise))?;
        Ok(greedy(&q_values(&self.support, &p), self.net.actions))
    }

    pub fn step(&mut self) -> Result<RainbowStep> {
        let e = self.env.num_envs();
        let mut px = vec![0u8; e * self.env.obs_len()];
        self.env.observations_u8(&mut px);
        let obs: Vec<f64> = px.iter().map(|&v| f64::from(v) / 255.0).collect();
        let actions = self.act(&obs)?;
        let st = self.env.step(&actions)?;
        self.replay.push(&px, &actions, &st.rewards, &st.dones)?;
        self.vec_steps += 1;
        let mut out = RainbowStep {
            episodes: st.ended,
            update: None,
            synced_target: false,
        };
        let ready = self.replay.len() >= self.hyper.min_history.max(self.hyper.batch_size);
        if ready && self.vec_steps % self.hyper.update_every as u64 == 0 {
            out.update = Some(self.learn()?);
            if self.updates % self.hyper.target_period == 0 {
                self.target.copy_values_from(&self.online);
                self.target_syncs += 1;
                out.synced_target = true;
            }
        }
        Ok(out)
    }

    /// One prioritized sample and gradient step.
    pub fn learn(&mut self) -> Result<RainbowStats> {
        let samples = self.replay.sample(self.hyper.batch_size, &mut self.sample_rng)?;
        let batch = ReplayBatch::from_samples(&samples);
        let rngs = LearnRngs {
            noise: &mut self.learn_noise,
            mix: &mut self.mix_rng,
            augment: &mut self.aug_rng,
        };
        let (stats, kl) = kl_update(
            &self.net,
            &mut self.online,
            &self.target,
            &self.support,
            &batch,
            &self.hyper,
            &self.augment,
            rngs,
        )?;
        self.replay.update_priorities(&batch.records, &kl);
        self.updates += 1;
        Ok(stats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mix::LambdaSource;
    use crate::rng::rng_from_seed;

    #[test]
    fn matching_prediction_has_zero_excess_and_uniform_costs_log_k() {
        let k = 51;
        let mut g = Graph::new();
        let lp = g.input(Tensor::new(vec![1, 1, k], vec![-(k as f64).ln(); k]).unwrap());
        let mut point = vec![0.0; k];
        point[7] = 1.0;
        let (loss, kl) = kl_loss(&mut g, lp, &[0], &point, &[1.0]);
        assert!((kl[0] - (51f64).ln()).abs() < 1e-12);
        assert!((g.value(loss).item() - 3.9318).abs() < 1e-4);
        // Cross-entropy equals the target's entropy when prediction matches.
        let p = [0.2, 0.3, 0.5];
        let lp = g.input(Tensor::new(vec![1, 1, 3], p.iter().map(|x: &f64| x.ln()).collect()).unwrap());
        let (_, kl) = kl_loss(&mut g, lp, &[0], &p, &[1.0]);
        let h: f64 = -p.iter().map(|x| x * x.ln()).sum::<f64>();
        assert!((kl[0] - h).abs() < 1e-12);
    }

    #[test]
    fn mixed_target_endpoints_and_validity() {
        let s = Support::new(0.0, 4.0, 5).unwrap();
        let a = 2;
        let next: Vec<f64> = vec![
            0.1, 0.2, 0.3, 0.2, 0.2, 0.5, 0.5, 0.0, 0.0, 0.0, // i=0
            0.0, 0.0, 0.0, 0.0, 1.0, 0.2, 0.2, 0.2, 0.2, 0.2, // i=1
        ];
        let ret = [1.0, 0.5];
        let disc = [0.9, 0.0];
        let a_star = [1, 0];
        let plain = target_distribution(&s, a, &ret, &disc, &next, &a_star, None);
        let one = MixPlan { partners: vec![1, 0], lambdas: vec![1.0, 1.0] };
        assert_eq!(target_distribution(&s, a, &ret, &disc, &next, &a_star, Some((&one, MixMode::Full))), plain);
        let mut rng = rng_from_seed(2);
        for _ in 0..50 {
            let plan = MixPlan::sample(2, LambdaSource::Beta(0.2), &mut rng).unwrap();
            let m = target_distribution(&s, a, &ret, &disc, &next, &a_star, Some((&plan, MixMode::Full)));
            for row in m.chunks(5) {
                assert!(row.iter().all(|p| *p >= 0.0));
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        // Terminal element: a point mass at the return, split over atoms 0 and 1.
        assert!((plain[5] - 0.5).abs() < 1e-12 && (plain[6] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn hyper_defaults_and_validation() {
        let h = RainbowHyper::default();
        assert_eq!((h.atoms, h.n_step, h.omega, h.beta), (51, 3, 0.5, 0.4));
        assert_eq!((h.lr, h.adam_eps, h.gamma), (2.5e-4, 1.5e-4, 0.999));
        assert!(h.validate().is_ok());
        assert!(RainbowHyper { min_history: 100_000, ..h.clone() }.validate().is_err());
        let s = h.support(10.0).unwrap();
        assert_eq!((s.v_min, s.v_max, s.len()), (0.0, 10.0, 51));
        let neg = RainbowHyper { v_min: Some(-5.0), ..h }.support(10.0).unwrap();
        assert_eq!(neg.v_min, -5.0);
    }

    #[test]
    fn argmax_prefers_first_on_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(greedy(&[0.0, 1.0, 2.0, 1.0], 2), vec![1, 0]);
    }
}
