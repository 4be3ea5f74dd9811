//! Declarative experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::mix::AugmentSpec;
use crate::nn::TrunkConfig;
use crate::ppo::PpoHyper;
use crate::rainbow::RainbowHyper;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Ppo,
    Rainbow,
}

/// Network size and regularizers shared by both algorithms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub channel_mult: usize,
    pub batch_norm: bool,
    pub l2_weight: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channel_mult: 1,
            batch_norm: false,
            l2_weight: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub lipschitz_pairs: usize,
    /// Corpus for the Lipschitz estimate: random-walk snapshots of train levels.
    pub corpus_levels: usize,
    pub corpus_per_level: usize,
    pub surface_resolution: usize,
    pub random_episodes: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            lipschitz_pairs: 100_000,
            corpus_levels: 64,
            corpus_per_level: 8,
            surface_resolution: 10,
            random_episodes: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub algorithm: Algorithm,
    pub n_train_levels: u64,
    pub n_envs: usize,
    pub total_timesteps: u64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    /// Window of completed training episodes behind the running train return.
    pub train_window: usize,
    pub seeds: Vec<u64>,
    /// Runs land in `<out_dir>/<name>/seed-<s>`.
    pub out_dir: PathBuf,
    pub env: EnvConfig,
    pub augment: AugmentSpec,
    pub model: ModelConfig,
    pub ppo: PpoHyper,
    pub rainbow: RainbowHyper,
    pub analysis: AnalysisConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            algorithm: Algorithm::Ppo,
            n_train_levels: 500,
            n_envs: 16,
            total_timesteps: 2_000_000,
            eval_interval: 50_000,
            eval_episodes: 32,
            train_window: 100,
            seeds: vec![1, 2, 3],
            out_dir: PathBuf::from("runs"),
            env: EnvConfig::default(),
            augment: AugmentSpec::default(),
            model: ModelConfig::default(),
            ppo: PpoHyper::default(),
            rainbow: RainbowHyper::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

/// Parse a TOML scalar/array literal, falling back to a bare string.
fn parse_literal(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Set a dotted `key=value` inside a TOML table, creating sections as needed.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let mut table = doc;
    for part in &path[..path.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{part}` is not a section")))?;
    }
    table.insert(path[path.len() - 1].to_string(), parse_literal(raw.trim()));
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| Error::Config(one_line(&e.to_string())))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: Self = doc.try_into().map_err(|e: toml::de::Error| Error::Config(one_line(&e.to_string())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn trunk(&self) -> TrunkConfig {
        TrunkConfig {
            channel_mult: self.model.channel_mult,
            batch_norm: self.model.batch_norm,
            noisy_sigma0: None,
        }
    }

    pub fn ppo_hyper(&self) -> PpoHyper {
        PpoHyper {
            l2_weight: self.model.l2_weight,
            ..self.ppo.clone()
        }
    }

    pub fn rainbow_hyper(&self) -> RainbowHyper {
        RainbowHyper {
            l2_weight: self.model.l2_weight,
            ..self.rainbow.clone()
        }
    }

    /// Every check that can fail before compute starts.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad(format!("invalid run name `{}`", self.name));
        }
        if !matches!(self.model.channel_mult, 1 | 2 | 4) {
            return bad(format!("model.channel_mult must be 1, 2 or 4, got {}", self.model.channel_mult));
        }
        if !(self.model.l2_weight >= 0.0) {
            return bad("model.l2_weight must be non-negative".into());
        }
        if self.n_envs == 0 || self.total_timesteps == 0 || self.eval_interval == 0 || self.eval_episodes == 0 {
            return bad("n_envs, total_timesteps, eval_interval and eval_episodes must be positive".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds must list at least one seed".into());
        }
        if self.train_window == 0 {
            return bad("train_window must be positive".into());
        }
        if self.analysis.surface_resolution < 2 || self.analysis.lipschitz_pairs == 0 {
            return bad("analysis.surface_resolution must be >= 2 and lipschitz_pairs > 0".into());
        }
        self.env.validate()?;
        crate::env::split_levels(self.n_train_levels, self.env.universe)?;
        self.augment.validate(self.env.obs_size)?;
        match self.algorithm {
            Algorithm::Ppo => {
                let h = self.ppo_hyper();
                h.validate()?;
                let batch = h.rollout_len * self.n_envs;
                if self.augment.method.mix_mode().is_some() && batch / h.minibatches < 2 {
                    return bad("minibatches too small to mix".into());
                }
            }
            Algorithm::Rainbow => self.rainbow_hyper().validate()?,
        }
        Ok(())
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}
