//! A batch of environment instances with automatic resets.

use std::collections::HashMap;

use super::{make_level, EnvConfig, EnvState, LevelSeed, LevelSet};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Bound on memoized level layouts.
const LEVEL_CACHE: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeEnd {
    pub env: usize,
    pub level: u64,
    pub ret: f64,
    pub len: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VecStep {
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub ended: Vec<EpisodeEnd>,
}

/// `E` instances, each reset to a level drawn uniformly from `levels` when
/// its episode ends. Observations after a step that ended an episode belong
/// to the freshly reset level.
#[derive(Debug, Clone)]
pub struct VecEnv {
    cfg: EnvConfig,
    levels: LevelSet,
    envs: Vec<EnvState>,
    rng: Rng,
    ep_return: Vec<f64>,
    cache: HashMap<u64, EnvState>,
}

impl VecEnv {
    pub fn new(cfg: EnvConfig, levels: LevelSet, n_envs: usize, rng: Rng) -> Result<Self> {
        cfg.validate()?;
        if n_envs == 0 {
            return Err(Error::Config("at least one environment instance is required".into()));
        }
        if levels.is_empty() {
            return Err(Error::Config("empty level set".into()));
        }
        let mut v = Self {
            cfg,
            levels,
            envs: Vec::with_capacity(n_envs),
            rng,
            ep_return: vec![0.0; n_envs],
            cache: HashMap::new(),
        };
        for _ in 0..n_envs {
            let s = v.fresh_level()?;
            v.envs.push(s);
        }
        Ok(v)
    }

    fn fresh_level(&mut self) -> Result<EnvState> {
        let index = self.levels.sample(&mut self.rng);
        if let Some(s) = self.cache.get(&index) {
            return Ok(s.clone());
        }
        let s = make_level(LevelSeed::new(self.cfg.game, index), &self.cfg)?;
        if self.cache.len() >= LEVEL_CACHE {
            self.cache.clear();
        }
        self.cache.insert(index, s.clone());
        Ok(s)
    }

    pub fn num_envs(&self) -> usize {
        self.envs.len()
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn levels(&self) -> &LevelSet {
        &self.levels
    }

    pub fn obs_len(&self) -> usize {
        self.cfg.obs_len()
    }

    pub fn states(&self) -> &[EnvState] {
        &self.envs
    }

    /// Current observations, `E × obs_len` values in `[0, 1]`.
    pub fn observations(&self) -> Vec<f64> {
        let mut px = vec![0u8; self.envs.len() * self.obs_len()];
        self.observations_u8(&mut px);
        px.iter().map(|&v| f64::from(v) / 255.0).collect()
    }

    pub fn observations_u8(&self, out: &mut [u8]) {
        let n = self.obs_len();
        for (s, chunk) in self.envs.iter().zip(out.chunks_mut(n)) {
            s.render_u8(chunk);
        }
    }

    pub fn step(&mut self, actions: &[usize]) -> Result<VecStep> {
        if actions.len() != self.envs.len() {
            return Err(Error::Shape(format!(
                "{} actions for {} environments",
                actions.len(),
                self.envs.len()
            )));
        }
        let mut out = VecStep {
            rewards: Vec::with_capacity(actions.len()),
            dones: Vec::with_capacity(actions.len()),
            ended: Vec::new(),
        };
        for (i, &a) in actions.iter().enumerate() {
            let o = self.envs[i].step(a)?;
            self.ep_return[i] += o.reward;
            out.rewards.push(o.reward);
            out.dones.push(o.done);
            if o.done {
                out.ended.push(EpisodeEnd {
                    env: i,
                    level: self.envs[i].level.index,
                    ret: self.ep_return[i],
                    len: self.envs[i].steps,
                });
                self.ep_return[i] = 0.0;
                self.envs[i] = self.fresh_level()?;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{greedy_action, GameId};
    use crate::rng::rng_from_seed;

    #[test]
    fn resets_draw_from_level_set() {
        let cfg = EnvConfig::for_game(GameId::Collector);
        let set = LevelSet::List(vec![3, 7]);
        let mut v = VecEnv::new(cfg, set.clone(), 4, rng_from_seed(0)).unwrap();
        let mut ends = 0;
        for _ in 0..300 {
            let actions: Vec<usize> = v.states().iter().map(greedy_action).collect();
            let st = v.step(&actions).unwrap();
            ends += st.ended.len();
            for s in v.states() {
                assert!(set.contains(s.level.index));
                assert!(!s.done);
            }
        }
        assert!(ends > 4);
    }

    #[test]
    fn identical_seeds_identical_trajectories() {
        let cfg = EnvConfig::for_game(GameId::Corridor);
        let run = || {
            let mut v = VecEnv::new(cfg.clone(), LevelSet::Range { start: 0, end: 50 }, 3, rng_from_seed(9)).unwrap();
            let mut rng = rng_from_seed(1);
            let mut trace = Vec::new();
            for _ in 0..200 {
                let a: Vec<usize> = (0..3).map(|_| crate::env::random_action(&mut rng)).collect();
                let st = v.step(&a).unwrap();
                trace.push((st.rewards, st.dones, v.observations()));
            }
            trace
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn wrong_action_count_rejected() {
        let mut v = VecEnv::new(EnvConfig::default(), LevelSet::List(vec![0]), 2, rng_from_seed(0)).unwrap();
        assert!(v.step(&[0]).is_err());
    }
}
