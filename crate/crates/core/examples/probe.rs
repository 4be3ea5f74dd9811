//! Quick learning probe: `probe <ppo|rainbow> <game> <levels> <steps> <obs> [method]`.
//!
//! Hyperparameters come from environment variables so sweeps need no
//! rebuild: `E` (envs), `LR`, `GAMMA`; PPO also reads `T`, `MB`, `EPOCHS`,
//! `ENT`; Rainbow reads `BATCH`, `UE`, `TP`, `SIGMA`.

use std::time::Instant;

use mixreg::env::{split_levels, EnvConfig, VecEnv};
use mixreg::env::EnvState;
use mixreg::eval::{evaluate, Actor, GreedyActor, GreedyQ, StochasticPolicy};
use mixreg::rollout::{ActorCritic, PolicySnapshot};
use mixreg::mix::{AugmentMethod, AugmentSpec};
use mixreg::nn::TrunkConfig;
use mixreg::ppo::{PpoAgent, PpoHyper};
use mixreg::rainbow::{RainbowAgent, RainbowHyper};
use mixreg::rng::{rng_from_seed, SeedStreams};

struct Argmax<'a>(PolicySnapshot<'a>);

impl Actor for Argmax<'_> {
    fn act(&mut self, obs: &[f64], states: &[&EnvState]) -> mixreg::Result<Vec<usize>> {
        let (p, _) = self.0.evaluate(obs, states.len())?;
        Ok(p.chunks(self.0.num_actions()).map(mixreg::rainbow::argmax).collect())
    }
}

fn main() {
    let a: Vec<String> = std::env::args().collect();
    let algo = a[1].clone();
    let mut cfg = EnvConfig::for_game(a[2].parse().unwrap());
    let levels: u64 = a[3].parse().unwrap();
    let steps: u64 = a[4].parse().unwrap();
    cfg.obs_size = a[5].parse().unwrap();
    let method = match a.get(6).map(String::as_str) {
        Some("mixreg") => AugmentMethod::Mixreg,
        _ => AugmentMethod::None,
    };
    let split = split_levels(levels, cfg.universe).unwrap();
    let streams = SeedStreams::new(1);
    let env = VecEnv::new(cfg.clone(), split.train(), std::env::var("E").ok().and_then(|v| v.parse().ok()).unwrap_or(16), streams.stream("env")).unwrap();
    let g = evaluate(&mut GreedyActor, &cfg, &split.train(), 128, 32, &mut rng_from_seed(6)).unwrap();
    println!("greedy {:.3}", g.mean());
    let t0 = Instant::now();
    let mut next_eval = 0;
    if algo == "ppo" {
        let var = |k: &str, d: f64| std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d);
        let mut hyper = PpoHyper::default();
        hyper.rollout_len = var("T", 256.0) as usize;
        hyper.minibatches = var("MB", 8.0) as usize;
        hyper.epochs = var("EPOCHS", 3.0) as usize;
        hyper.lr = var("LR", hyper.lr);
        hyper.entropy_coef = var("ENT", hyper.entropy_coef);
        hyper.gamma = var("GAMMA", hyper.gamma);
        let mut ag = PpoAgent::new(env, &TrunkConfig::default(), hyper, AugmentSpec::with_method(method), &streams).unwrap();
        while ag.timesteps() < steps {
            let it = ag.iterate().unwrap();
            if ag.timesteps() >= next_eval {
                next_eval += 50_000;
                let mut actor = StochasticPolicy { policy: ag.snapshot(), rng: rng_from_seed(5) };
                let tr = evaluate(&mut actor, &cfg, &split.train(), 64, 32, &mut rng_from_seed(6)).unwrap();
                let te = evaluate(&mut actor, &cfg, &split.test(), 64, 32, &mut rng_from_seed(7)).unwrap();
                let mut am = Argmax(ag.snapshot());
                let ta = evaluate(&mut am, &cfg, &split.train(), 64, 32, &mut rng_from_seed(6)).unwrap();
                println!(
                    "{:>8} {:>6.0}s argmax {:.3} train {:.3} test {:.3} ent {:.3} vl {:.4} kl {:.4} eps {}",
                    ag.timesteps(), t0.elapsed().as_secs_f64(), ta.mean(), tr.mean(), te.mean(),
                    it.stats.entropy, it.stats.value_loss, it.stats.approx_kl, it.episodes.len()
                );
            }
        }
    } else {
        let var = |k: &str, d: f64| std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d);
        let mut hyper = RainbowHyper::default();
        hyper.lr = var("LR", hyper.lr);
        hyper.gamma = var("GAMMA", hyper.gamma);
        hyper.batch_size = var("BATCH", hyper.batch_size as f64) as usize;
        hyper.update_every = var("UE", hyper.update_every as f64) as usize;
        hyper.target_period = var("TP", hyper.target_period as f64) as u64;
        hyper.sigma0 = var("SIGMA", hyper.sigma0);
        let mut ag = RainbowAgent::new(env, &TrunkConfig::default(), hyper, AugmentSpec::with_method(method), &streams).unwrap();
        let mut last = None;
        let mut recent: std::collections::VecDeque<(f64, u32)> = Default::default();
        while ag.timesteps() < steps {
            let st = ag.step().unwrap();
            for e in &st.episodes {
                recent.push_back((e.ret, e.len));
                if recent.len() > 100 {
                    recent.pop_front();
                }
            }
            if st.update.is_some() {
                last = st.update;
            }
            if ag.timesteps() >= next_eval {
                next_eval += 50_000;
                let mut actor = GreedyQ(&ag);
                let tr = evaluate(&mut actor, &cfg, &split.train(), 64, 32, &mut rng_from_seed(6)).unwrap();
                let te = evaluate(&mut actor, &cfg, &split.test(), 64, 32, &mut rng_from_seed(7)).unwrap();
                let n = recent.len().max(1) as f64;
                let (kl, q) = last.as_ref().map_or((0.0, 0.0), |s: &mixreg::rainbow::RainbowStats| (s.mean_kl, s.mean_q));
                println!(
                    "{:>8} {:>6.0}s train {:.3} test {:.3} noisy-train {:.3} len {:.0} upd {} kl {kl:.3} q {q:.3}",
                    ag.timesteps(), t0.elapsed().as_secs_f64(), tr.mean(), te.mean(),
                    recent.iter().map(|r| r.0).sum::<f64>() / n, recent.iter().map(|r| f64::from(r.1)).sum::<f64>() / n, ag.updates
                );
            }
        }
    }
}
