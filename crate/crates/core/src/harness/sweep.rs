//! One-axis sweeps over a base configuration.

use std::fmt;
use std::fs;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::run::run;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    Levels,
    ModelSize,
    Alpha,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Levels => "levels",
            SweepAxis::ModelSize => "model-size",
            SweepAxis::Alpha => "alpha",
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "levels" => Ok(SweepAxis::Levels),
            "model-size" => Ok(SweepAxis::ModelSize),
            "alpha" => Ok(SweepAxis::Alpha),
            _ => Err(Error::Config(format!("unknown sweep axis `{s}` (levels, model-size, alpha)"))),
        }
    }
}

/// `base` with the axis set to `value`, renamed `<name>-<axis>-<value>`.
pub fn apply_axis(base: &ExperimentConfig, axis: SweepAxis, value: &str) -> Result<ExperimentConfig> {
    let bad = || Error::Config(format!("invalid {axis} value `{value}`"));
    let mut cfg = base.clone();
    match axis {
        SweepAxis::Levels => cfg.n_train_levels = value.parse().map_err(|_| bad())?,
        SweepAxis::ModelSize => cfg.model.channel_mult = value.parse().map_err(|_| bad())?,
        SweepAxis::Alpha => cfg.augment.mix_alpha = value.parse().map_err(|_| bad())?,
    }
    cfg.name = format!("{}-{axis}-{value}", base.name);
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    pub seed: u64,
    pub train_return: Option<f64>,
    pub test_return: Option<f64>,
    /// `None` on success, otherwise the one-line error.
    pub error: Option<String>,
}

/// Run every `(value, seed)` pair. Individual failures are recorded in the
/// returned rows and in `sweep-<axis>.csv`; only invalid axis values abort
/// up front.
pub fn sweep(base: &ExperimentConfig, axis: SweepAxis, values: &[String]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let configs = values
        .iter()
        .map(|v| apply_axis(base, axis, v))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (value, cfg) in values.iter().zip(&configs) {
        for &seed in &cfg.seeds {
            let row = match run(cfg, seed) {
                Ok(a) => SweepRow {
                    value: value.clone(),
                    seed,
                    train_return: a.last().map(|r| r.train_eval_return),
                    test_return: a.last().map(|r| r.test_return),
                    error: None,
                },
                Err(e) => SweepRow {
                    value: value.clone(),
                    seed,
                    train_return: None,
                    test_return: None,
                    error: Some(format!("{}: {e}", e.kind())),
                },
            };
            rows.push(row);
        }
    }
    let dir = base.out_dir.join(&base.name);
    fs::create_dir_all(&dir)?;
    let mut f = fs::File::create(dir.join(format!("sweep-{axis}.csv")))?;
    writeln!(f, "{axis},seed,train_return,test_return,error")?;
    let opt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
    for r in &rows {
        writeln!(
            f,
            "{},{},{},{},{}",
            r.value,
            r.seed,
            opt(r.train_return),
            opt(r.test_return),
            r.error.as_deref().unwrap_or("").replace(',', ";")
        )?;
    }
    Ok(rows)
}
