//! One seeded training run: train on the train split, evaluate zero-shot on
//! held-out levels at fixed intervals, persist everything under a run dir.

use std::collections::{BTreeMap, VecDeque};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{Algorithm, ExperimentConfig};
use crate::env::{split_levels, EnvConfig, EpisodeEnd, LevelSplit, VecEnv};
use crate::error::{Error, Result};
use crate::eval::{evaluate, Actor, EvalResult, GreedyQ, StochasticPolicy};
use crate::nn::checkpoint::write_checkpoint;
use crate::nn::NetworkParams;
use crate::ppo::PpoAgent;
use crate::rainbow::RainbowAgent;
use crate::rng::{derive_seed, rng_from_seed, SeedStreams};

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const TIMING_FILE: &str = "timing.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const CHECKPOINT_FILE: &str = "final.ckpt";
pub const ERROR_FILE: &str = "error.txt";

/// One evaluation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub timestep: u64,
    /// Mean of the last `train_window` completed training episodes.
    pub train_return: Option<f64>,
    /// Evaluation-protocol return on train levels.
    pub train_eval_return: f64,
    /// Zero-shot return on unseen test levels.
    pub test_return: f64,
    pub test_return_std: f64,
    pub episodes: u64,
    pub grad_steps: u64,
    /// Loss diagnostics averaged over updates since the previous record.
    pub losses: BTreeMap<String, f64>,
}

#[derive(Debug, Clone)]
pub struct RunArtifact {
    pub dir: PathBuf,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub records: Vec<MetricsRecord>,
}

impl RunArtifact {
    pub fn last(&self) -> Option<&MetricsRecord> {
        self.records.last()
    }
}

pub fn run_dir(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    cfg.out_dir.join(&cfg.name).join(format!("seed-{seed}"))
}

/// Test-level indices must never come from the train split.
pub fn check_disjoint(split: &LevelSplit, eval_levels: &[u64]) -> Result<()> {
    match eval_levels.iter().find(|&&l| split.is_train(l)) {
        Some(l) => Err(Error::Protocol(format!("test evaluation drew train level {l}"))),
        None => Ok(()),
    }
}

enum Trainer {
    Ppo(Box<PpoAgent>),
    Rainbow(Box<RainbowAgent>),
}

/// Outcome of advancing a trainer by one unit of work.
struct Advance {
    episodes: Vec<EpisodeEnd>,
    stats: Option<BTreeMap<String, f64>>,
    grad_steps: u64,
}

fn stat_map<T: Serialize>(s: &T) -> BTreeMap<String, f64> {
    match serde_json::to_value(s) {
        Ok(serde_json::Value::Object(m)) => m.into_iter().filter_map(|(k, v)| v.as_f64().map(|x| (k, x))).collect(),
        _ => BTreeMap::new(),
    }
}

impl Trainer {
    fn new(cfg: &ExperimentConfig, env: VecEnv, streams: &SeedStreams) -> Result<Self> {
        Ok(match cfg.algorithm {
            Algorithm::Ppo => Trainer::Ppo(Box::new(PpoAgent::new(
                env,
                &cfg.trunk(),
                cfg.ppo_hyper(),
                cfg.augment.clone(),
                streams,
            )?)),
            Algorithm::Rainbow => Trainer::Rainbow(Box::new(RainbowAgent::new(
                env,
                &cfg.trunk(),
                cfg.rainbow_hyper(),
                cfg.augment.clone(),
                streams,
            )?)),
        })
    }

    fn timesteps(&self) -> u64 {
        match self {
            Trainer::Ppo(a) => a.timesteps(),
            Trainer::Rainbow(a) => a.timesteps(),
        }
    }

    fn advance(&mut self) -> Result<Advance> {
        match self {
            Trainer::Ppo(a) => {
                let it = a.iterate()?;
                Ok(Advance {
                    episodes: it.episodes,
                    stats: Some(stat_map(&it.stats)),
                    grad_steps: (a.hyper.epochs * a.hyper.minibatches) as u64,
                })
            }
            Trainer::Rainbow(a) => {
                let st = a.step()?;
                Ok(Advance {
                    episodes: st.episodes,
                    grad_steps: u64::from(st.update.is_some()),
                    stats: st.update.as_ref().map(stat_map),
                })
            }
        }
    }

    fn evaluate(&self, env: &EnvConfig, levels: &crate::env::LevelSet, episodes: usize, seed: u64) -> Result<EvalResult> {
        let mut level_rng = rng_from_seed(derive_seed(seed, "levels"));
        let batch = 32;
        match self {
            Trainer::Ppo(a) => {
                let mut actor = StochasticPolicy {
                    policy: a.snapshot(),
                    rng: rng_from_seed(derive_seed(seed, "actions")),
                };
                evaluate(&mut actor, env, levels, episodes, batch, &mut level_rng)
            }
            Trainer::Rainbow(a) => evaluate(&mut GreedyQ(a), env, levels, episodes, batch, &mut level_rng),
        }
    }

    pub fn params(&self) -> &NetworkParams {
        match self {
            Trainer::Ppo(a) => &a.params,
            Trainer::Rainbow(a) => &a.online,
        }
    }
}

/// Evaluate a trained actor the same way the harness does (used by callers
/// that hold an agent outside a run).
pub fn evaluate_actor(actor: &mut impl Actor, env: &EnvConfig, levels: &crate::env::LevelSet, episodes: usize, seed: u64) -> Result<EvalResult> {
    let mut level_rng = rng_from_seed(derive_seed(seed, "levels"));
    evaluate(actor, env, levels, episodes, 32, &mut level_rng)
}

fn write_json_line<T: Serialize>(w: &mut impl Write, v: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, v)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn write_summary(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    writeln!(f, "timestep,train_return,train_eval_return,test_return,test_return_std,gap,episodes,grad_steps")?;
    if let Some(r) = records.last() {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{}",
            r.timestep,
            r.train_return.map_or(String::new(), |x| x.to_string()),
            r.train_eval_return,
            r.test_return,
            r.test_return_std,
            r.train_eval_return - r.test_return,
            r.episodes,
            r.grad_steps
        )?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_metrics(dir: &Path) -> Result<Vec<MetricsRecord>> {
    let text = fs::read_to_string(dir.join(METRICS_FILE))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Train one seed of `cfg` into [`run_dir`].
pub fn run(cfg: &ExperimentConfig, seed: u64) -> Result<RunArtifact> {
    cfg.validate()?;
    let mut cfg = cfg.clone();
    cfg.seeds = vec![seed];
    let dir = run_dir(&cfg, seed);
    run_in(&cfg, seed, &dir)
}

/// Like [`run`] but into an explicit directory.
pub fn run_in(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<RunArtifact> {
    cfg.validate()?;
    fs::create_dir_all(dir)?;
    let _ = fs::remove_file(dir.join(ERROR_FILE));
    fs::write(dir.join(CONFIG_FILE), cfg.to_toml()?)?;

    let streams = SeedStreams::new(seed);
    let split = split_levels(cfg.n_train_levels, cfg.env.universe)?;
    let env = VecEnv::new(cfg.env.clone(), split.train(), cfg.n_envs, streams.stream("env"))?;
    let mut trainer = Trainer::new(cfg, env, &streams)?;

    let mut metrics = BufWriter::new(File::create(dir.join(METRICS_FILE))?);
    let mut timing = BufWriter::new(File::create(dir.join(TIMING_FILE))?);
    let started = Instant::now();
    let mut records: Vec<MetricsRecord> = Vec::new();
    let mut window: VecDeque<f64> = VecDeque::with_capacity(cfg.train_window);
    let mut episodes = 0u64;
    let mut grad_steps = 0u64;
    let mut sums: BTreeMap<String, f64> = BTreeMap::new();
    let mut n_stats = 0u64;
    let mut next_eval = cfg.eval_interval.min(cfg.total_timesteps);
    let eval_seed = streams.seed("eval");

    let outcome: Result<()> = (|| {
        while trainer.timesteps() < cfg.total_timesteps {
            let adv = trainer.advance()?;
            grad_steps += adv.grad_steps;
            for ep in &adv.episodes {
                if window.len() == cfg.train_window {
                    window.pop_front();
                }
                window.push_back(ep.ret);
                episodes += 1;
            }
            if let Some(s) = adv.stats {
                for (k, v) in s {
                    *sums.entry(k).or_default() += v;
                }
                n_stats += 1;
            }
            let t = trainer.timesteps();
            if t >= next_eval || t >= cfg.total_timesteps {
                while next_eval <= t {
                    next_eval += cfg.eval_interval;
                }
                let point_seed = derive_seed(eval_seed, &t.to_string());
                let test = trainer.evaluate(&cfg.env, &split.test(), cfg.eval_episodes, derive_seed(point_seed, "test"))?;
                check_disjoint(&split, &test.levels)?;
                let train = trainer.evaluate(&cfg.env, &split.train(), cfg.eval_episodes, derive_seed(point_seed, "train"))?;
                let losses: BTreeMap<String, f64> = sums.iter().map(|(k, v)| (k.clone(), v / n_stats.max(1) as f64)).collect();
                if let Some((k, v)) = losses.iter().find(|(_, v)| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        what: "training signal",
                        detail: format!("{k} = {v} at timestep {t}"),
                    });
                }
                let rec = MetricsRecord {
                    timestep: t,
                    train_return: (!window.is_empty()).then(|| window.iter().sum::<f64>() / window.len() as f64),
                    train_eval_return: train.mean(),
                    test_return: test.mean(),
                    test_return_std: test.std(),
                    episodes,
                    grad_steps,
                    losses,
                };
                write_json_line(&mut metrics, &rec)?;
                write_json_line(
                    &mut timing,
                    &serde_json::json!({ "timestep": t, "wall_clock_s": started.elapsed().as_secs_f64() }),
                )?;
                records.push(rec);
                sums.clear();
                n_stats = 0;
            }
        }
        Ok(())
    })();

    // The artifact is written whether or not training finished.
    write_checkpoint(trainer.params(), BufWriter::new(File::create(dir.join(CHECKPOINT_FILE))?))?;
    write_summary(&dir.join(SUMMARY_FILE), &records)?;
    if let Err(e) = outcome {
        fs::write(dir.join(ERROR_FILE), format!("{}: {e}\n", e.kind()))?;
        return Err(e);
    }
    Ok(RunArtifact {
        dir: dir.to_path_buf(),
        config: cfg.clone(),
        seed,
        records,
    })
}

/// Load a finished run from disk.
pub fn load_run(dir: &Path) -> Result<RunArtifact> {
    let cfg = ExperimentConfig::load(&dir.join(CONFIG_FILE), &[])?;
    let seed = *cfg
        .seeds
        .first()
        .ok_or_else(|| Error::Config(format!("{}: resolved config has no seed", dir.display())))?;
    Ok(RunArtifact {
        dir: dir.to_path_buf(),
        records: read_metrics(dir)?,
        config: cfg,
        seed,
    })
}
