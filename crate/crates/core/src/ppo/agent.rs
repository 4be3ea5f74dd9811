//! Collect-then-optimize loop around [`ppo_update`].

use super::{ppo_update, PpoHyper, PpoStats, UpdateRngs};
use crate::env::{EpisodeEnd, VecEnv};
use crate::error::Result;
use crate::mix::AugmentSpec;
use crate::nn::{NetworkParams, PolicyValueNet, TrunkConfig};
use crate::rng::{Rng, SeedStreams};
use crate::rollout::{PolicySnapshot, RolloutCollector};

#[derive(Debug, Clone, PartialEq)]
pub struct PpoIteration {
    pub stats: PpoStats,
    pub episodes: Vec<EpisodeEnd>,
}

pub struct PpoAgent {
    pub net: PolicyValueNet,
    pub params: NetworkParams,
    pub hyper: PpoHyper,
    pub augment: AugmentSpec,
    pub collector: RolloutCollector,
    pub iterations: u64,
    shuffle_rng: Rng,
    mix_rng: Rng,
    aug_rng: Rng,
}

impl PpoAgent {
    pub fn new(env: VecEnv, trunk: &TrunkConfig, hyper: PpoHyper, augment: AugmentSpec, streams: &SeedStreams) -> Result<Self> {
        hyper.validate()?;
        let cfg = env.config().clone();
        augment.validate(cfg.obs_size)?;
        let mut init = streams.stream("init");
        let (net, params) = PolicyValueNet::build(cfg.obs_shape(), crate::env::NUM_ACTIONS, trunk, &mut init)?;
        let collector = RolloutCollector::new(
            env,
            hyper.gamma,
            hyper.gae_lambda,
            hyper.normalize_rewards,
            streams.stream("act"),
        );
        Ok(Self {
            net,
            params,
            hyper,
            augment,
            collector,
            iterations: 0,
            shuffle_rng: streams.stream("shuffle"),
            mix_rng: streams.stream("mix"),
            aug_rng: streams.stream("augment"),
        })
    }

    pub fn snapshot(&self) -> PolicySnapshot<'_> {
        PolicySnapshot {
            net: &self.net,
            params: &self.params,
        }
    }

    pub fn steps_per_iteration(&self) -> u64 {
        (self.hyper.rollout_len * self.collector.env.num_envs()) as u64
    }

    pub fn timesteps(&self) -> u64 {
        self.iterations * self.steps_per_iteration()
    }

    pub fn iterate(&mut self) -> Result<PpoIteration> {
        let snap = PolicySnapshot {
            net: &self.net,
            params: &self.params,
        };
        let batch = self.collector.collect(&snap, self.hyper.rollout_len)?;
        let rngs = UpdateRngs {
            shuffle: &mut self.shuffle_rng,
            mix: &mut self.mix_rng,
            augment: &mut self.aug_rng,
        };
        let stats = ppo_update(&self.net, &mut self.params, &batch, &self.hyper, &self.augment, rngs)?;
        self.iterations += 1;
        Ok(PpoIteration {
            stats,
            episodes: batch.episodes,
        })
    }
}
