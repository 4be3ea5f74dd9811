//! Post-training diagnostics for a finished run directory.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index::sample;

use super::config::{Algorithm, ExperimentConfig};
use super::run::{load_run, RunArtifact, CHECKPOINT_FILE};
use crate::analysis::{
    empirical_lipschitz_with, normalized_scores, observation_corpus, policy_values, trunk_latents, GameReturns,
    LipschitzReport, ScoreConstants, ScoreSummary, ValueSurface,
};
use crate::env::{make_level, split_levels, LevelSeed, NUM_ACTIONS};
use crate::error::{Error, Result};
use crate::eval::random_policy_return;
use crate::nn::checkpoint::load_into;
use crate::nn::{DistQNet, NetworkParams, PolicyValueNet, TrunkConfig};
use crate::rainbow::{atom_probs, q_values, Support};
use crate::rng::SeedStreams;

pub const LIPSCHITZ_JSON: &str = "lipschitz.json";
pub const LIPSCHITZ_CSV: &str = "lipschitz.csv";
pub const SURFACE_JSON: &str = "surface.json";
pub const SURFACE_CSV: &str = "surface.csv";
pub const SURFACE_SVG: &str = "surface.svg";
pub const SCORES_JSON: &str = "scores.json";
pub const SCORES_CSV: &str = "scores.csv";

/// A trained network rebuilt from a run directory.
pub enum TrainedNet {
    Ppo(PolicyValueNet, NetworkParams),
    Rainbow(DistQNet, NetworkParams, Support),
}

impl TrainedNet {
    pub fn load(dir: &Path, cfg: &ExperimentConfig) -> Result<Self> {
        let mut init = SeedStreams::new(0).stream("init");
        let shape = cfg.env.obs_shape();
        let file = || -> Result<BufReader<File>> { Ok(BufReader::new(File::open(dir.join(CHECKPOINT_FILE))?)) };
        Ok(match cfg.algorithm {
            Algorithm::Ppo => {
                let (net, mut p) = PolicyValueNet::build(shape, NUM_ACTIONS, &cfg.trunk(), &mut init)?;
                load_into(&mut p, file()?)?;
                TrainedNet::Ppo(net, p)
            }
            Algorithm::Rainbow => {
                let h = cfg.rainbow_hyper();
                let trunk = TrunkConfig {
                    noisy_sigma0: Some(h.sigma0),
                    ..cfg.trunk()
                };
                let (net, mut p) = DistQNet::build(shape, NUM_ACTIONS, h.atoms, &trunk, &mut init)?;
                load_into(&mut p, file()?)?;
                let support = h.support(cfg.env.game.max_return(&cfg.env))?;
                TrainedNet::Rainbow(net, p, support)
            }
        })
    }

    /// Trunk representation, eval mode.
    pub fn latents(&self, obs: &[f64], batch: usize) -> Result<Vec<f64>> {
        match self {
            TrainedNet::Ppo(n, p) => trunk_latents(&n.trunk, p, obs, batch),
            TrainedNet::Rainbow(n, p, _) => trunk_latents(&n.trunk, p, obs, batch),
        }
    }

    /// State value: the critic for PPO, `max_a Q` for the Q-learner.
    pub fn values(&self, obs: &[f64], batch: usize) -> Result<Vec<f64>> {
        match self {
            TrainedNet::Ppo(n, p) => policy_values(n, p, obs, batch),
            TrainedNet::Rainbow(n, p, support) => {
                let q = q_values(support, &atom_probs(n, p, obs, None)?);
                Ok(q.chunks(n.actions).map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AnalyzeOptions {
    pub lipschitz: bool,
    pub surface: bool,
    pub scores: bool,
}

impl AnalyzeOptions {
    pub fn all() -> Self {
        Self {
            lipschitz: true,
            surface: true,
            scores: true,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct AnalysisOutputs {
    pub lipschitz: Option<LipschitzReport>,
    pub surface: Option<ValueSurface>,
    pub scores: Option<ScoreSummary>,
}

pub fn lipschitz_of_run(run: &RunArtifact, net: &TrainedNet) -> Result<LipschitzReport> {
    let cfg = &run.config;
    let streams = SeedStreams::new(run.seed);
    let split = split_levels(cfg.n_train_levels, cfg.env.universe)?;
    let mut rng = streams.stream("analysis-corpus");
    let corpus = observation_corpus(&cfg.env, &split.train(), cfg.analysis.corpus_levels, cfg.analysis.corpus_per_level, &mut rng)?;
    let mut pair_rng = streams.stream("analysis-pairs");
    empirical_lipschitz_with(&corpus, cfg.env.obs_len(), |x, b| net.latents(x, b), cfg.analysis.lipschitz_pairs, &mut pair_rng)
}

pub fn surface_of_run(run: &RunArtifact, net: &TrainedNet) -> Result<ValueSurface> {
    let cfg = &run.config;
    let split = split_levels(cfg.n_train_levels, cfg.env.universe)?;
    let train = split.train();
    if train.len() < 3 {
        return Err(Error::Config("value surface needs at least 3 train levels".into()));
    }
    let mut rng = SeedStreams::new(run.seed).stream("analysis-surface");
    let anchors = sample(&mut rng, train.len() as usize, 3)
        .into_iter()
        .map(|k| {
            let idx = match &train {
                crate::env::LevelSet::Range { start, .. } => start + k as u64,
                crate::env::LevelSet::List(v) => v[k],
            };
            Ok(make_level(LevelSeed::new(cfg.env.game, idx), &cfg.env)?.observation())
        })
        .collect::<Result<Vec<_>>>()?;
    crate::analysis::value_surface(
        [&anchors[0], &anchors[1], &anchors[2]],
        cfg.analysis.surface_resolution,
        |x, b| net.values(x, b),
    )
}

pub fn scores_of_run(run: &RunArtifact) -> Result<ScoreSummary> {
    let cfg = &run.config;
    let last = run
        .last()
        .ok_or_else(|| Error::Config(format!("{}: no metrics to score", run.dir.display())))?;
    let split = split_levels(cfg.n_train_levels, cfg.env.universe)?;
    let mut rng = SeedStreams::new(run.seed).stream("analysis-random");
    let random = random_policy_return(&cfg.env, &split.test(), cfg.analysis.random_episodes, &mut rng)?;
    let game = cfg.env.game.name().to_string();
    let mut returns = BTreeMap::new();
    returns.insert(
        game.clone(),
        GameReturns {
            train: last.train_eval_return,
            test: last.test_return,
        },
    );
    let mut constants = BTreeMap::new();
    constants.insert(
        game,
        ScoreConstants {
            random,
            max: cfg.env.game.max_return(&cfg.env),
        },
    );
    normalized_scores(&returns, &constants)
}

/// Run the selected diagnostics and write their outputs into `dir`.
pub fn analyze(dir: &Path, opts: AnalyzeOptions) -> Result<AnalysisOutputs> {
    let run = load_run(dir)?;
    let net = TrainedNet::load(dir, &run.config)?;
    let mut out = AnalysisOutputs::default();
    if opts.lipschitz {
        let rep = lipschitz_of_run(&run, &net)?;
        fs::write(dir.join(LIPSCHITZ_JSON), serde_json::to_string_pretty(&rep)?)?;
        let mut f = BufWriter::new(File::create(dir.join(LIPSCHITZ_CSV))?);
        writeln!(f, "ratio")?;
        for r in &rep.ratios {
            writeln!(f, "{r}")?;
        }
        f.flush()?;
        out.lipschitz = Some(rep);
    }
    if opts.surface {
        let s = surface_of_run(&run, &net)?;
        fs::write(dir.join(SURFACE_JSON), serde_json::to_string(&s)?)?;
        fs::write(dir.join(SURFACE_CSV), s.to_csv())?;
        fs::write(dir.join(SURFACE_SVG), s.to_svg(&format!("{} value surface", run.config.name)))?;
        out.surface = Some(s);
    }
    if opts.scores {
        let s = scores_of_run(&run)?;
        fs::write(dir.join(SCORES_JSON), serde_json::to_string_pretty(&s)?)?;
        let mut f = BufWriter::new(File::create(dir.join(SCORES_CSV))?);
        writeln!(f, "game,train,test,gap,norm_train,norm_test,norm_gap")?;
        for g in &s.games {
            writeln!(f, "{},{},{},{},{},{},{}", g.game, g.train, g.test, g.gap, g.norm_train, g.norm_test, g.norm_gap)?;
        }
        f.flush()?;
        out.scores = Some(s);
    }
    Ok(out)
}
