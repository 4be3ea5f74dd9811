//! Episode evaluation of any policy on a fixed set of levels.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::env::{greedy_action, make_level, random_action, EnvConfig, EnvState, LevelSeed, LevelSet};
use crate::error::Result;
use crate::rainbow::{atom_probs, greedy, q_values, RainbowAgent};
use crate::rng::Rng;
use crate::rollout::{sample_categorical, ActorCritic, PolicySnapshot};

/// Chooses actions for a batch of live episodes.
pub trait Actor {
    /// `obs` holds one observation per state, back to back.
    fn act(&mut self, obs: &[f64], states: &[&EnvState]) -> Result<Vec<usize>>;
}

pub struct RandomActor(pub Rng);

impl Actor for RandomActor {
    fn act(&mut self, _obs: &[f64], states: &[&EnvState]) -> Result<Vec<usize>> {
        Ok(states.iter().map(|_| random_action(&mut self.0)).collect())
    }
}

pub struct GreedyActor;

impl Actor for GreedyActor {
    fn act(&mut self, _obs: &[f64], states: &[&EnvState]) -> Result<Vec<usize>> {
        Ok(states.iter().map(|s| greedy_action(s)).collect())
    }
}

/// Samples from the policy distribution.
pub struct StochasticPolicy<'a> {
    pub policy: PolicySnapshot<'a>,
    pub rng: Rng,
}

impl Actor for StochasticPolicy<'_> {
    fn act(&mut self, obs: &[f64], states: &[&EnvState]) -> Result<Vec<usize>> {
        let a = self.policy.num_actions();
        let (probs, _) = self.policy.evaluate(obs, states.len())?;
        Ok(probs.chunks(a).map(|p| sample_categorical(p, &mut self.rng)).collect())
    }
}

/// Greedy in the mean-weight (noise-free) Q-values.
pub struct GreedyQ<'a>(pub &'a RainbowAgent);

impl Actor for GreedyQ<'_> {
    fn act(&mut self, obs: &[f64], _states: &[&EnvState]) -> Result<Vec<usize>> {
        let ag = self.0;
        let p = atom_probs(&ag.net, &ag.online, obs, None)?;
        Ok(greedy(&q_values(&ag.support, &p), ag.net.actions))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub levels: Vec<u64>,
    pub returns: Vec<f64>,
    pub lengths: Vec<u32>,
}

impl EvalResult {
    pub fn mean(&self) -> f64 {
        self.returns.iter().sum::<f64>() / self.returns.len().max(1) as f64
    }

    pub fn std(&self) -> f64 {
        let m = self.mean();
        let n = self.returns.len().max(1) as f64;
        (self.returns.iter().map(|r| (r - m).powi(2)).sum::<f64>() / n).sqrt()
    }
}

/// Draw `episodes` levels from `levels` and play each once, `batch` at a time.
pub fn evaluate(
    actor: &mut impl Actor,
    cfg: &EnvConfig,
    levels: &LevelSet,
    episodes: usize,
    batch: usize,
    level_rng: &mut Rng,
) -> Result<EvalResult> {
    let picks: Vec<u64> = (0..episodes).map(|_| levels.sample(level_rng)).collect();
    evaluate_levels(actor, cfg, &picks, batch)
}

/// Play one episode on each listed level.
pub fn evaluate_levels(actor: &mut impl Actor, cfg: &EnvConfig, levels: &[u64], batch: usize) -> Result<EvalResult> {
    let mut res = EvalResult {
        levels: levels.to_vec(),
        returns: Vec::with_capacity(levels.len()),
        lengths: Vec::with_capacity(levels.len()),
    };
    for wave in levels.chunks(batch.max(1)) {
        let mut states = wave
            .iter()
            .map(|&i| make_level(LevelSeed::new(cfg.game, i), cfg))
            .collect::<Result<Vec<_>>>()?;
        let mut totals = vec![0.0; states.len()];
        loop {
            let live: Vec<usize> = (0..states.len()).filter(|&k| !states[k].done).collect();
            if live.is_empty() {
                break;
            }
            let obs: Vec<f64> = live.iter().flat_map(|&k| states[k].observation()).collect();
            let refs: Vec<&EnvState> = live.iter().map(|&k| &states[k]).collect();
            let actions = actor.act(&obs, &refs)?;
            for (&k, a) in live.iter().zip(actions) {
                totals[k] += states[k].step(a)?.reward;
            }
        }
        res.returns.extend(totals);
        res.lengths.extend(states.iter().map(|s| s.steps));
    }
    Ok(res)
}

/// Mean return of the uniform random policy over `episodes` levels.
pub fn random_policy_return(cfg: &EnvConfig, levels: &LevelSet, episodes: usize, rng: &mut Rng) -> Result<f64> {
    let mut actor = RandomActor(crate::rng::rng_from_seed(rng.random()));
    Ok(evaluate(&mut actor, cfg, levels, episodes, 32, rng)?.mean())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::GameId;
    use crate::rng::rng_from_seed;

    #[test]
    fn greedy_reaches_max_and_random_is_lower() {
        for game in GameId::ALL {
            let cfg = EnvConfig::for_game(game);
            let set = LevelSet::Range { start: 0, end: 50 };
            let g = evaluate(&mut GreedyActor, &cfg, &set, 40, 8, &mut rng_from_seed(0)).unwrap();
            assert_eq!(g.mean(), game.max_return(&cfg));
            assert_eq!(g.returns.len(), 40);
            let r = random_policy_return(&cfg, &set, 100, &mut rng_from_seed(1)).unwrap();
            assert!(r < g.mean());
        }
    }
}
