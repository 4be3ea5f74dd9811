//! Normalized returns and generalization gaps across games.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Return of the uniform random policy and the maximum attainable return.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreConstants {
    pub random: f64,
    pub max: f64,
}

impl ScoreConstants {
    pub fn normalize(&self, ret: f64) -> f64 {
        (ret - self.random) / (self.max - self.random)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GameReturns {
    pub train: f64,
    pub test: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameScore {
    pub game: String,
    pub train: f64,
    pub test: f64,
    pub gap: f64,
    pub norm_train: f64,
    pub norm_test: f64,
    pub norm_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub games: Vec<GameScore>,
    /// Unweighted means over games of the normalized train/test scores.
    pub mean_norm_train: f64,
    pub mean_norm_test: f64,
    pub mean_norm_gap: f64,
}

pub fn normalized_scores(
    returns: &BTreeMap<String, GameReturns>,
    constants: &BTreeMap<String, ScoreConstants>,
) -> Result<ScoreSummary> {
    if returns.is_empty() {
        return Err(Error::Config("no games to score".into()));
    }
    let mut games = Vec::with_capacity(returns.len());
    for (game, r) in returns {
        let c = constants
            .get(game)
            .ok_or_else(|| Error::Config(format!("no score constants for game `{game}`")))?;
        if !(c.max > c.random) {
            return Err(Error::Config(format!(
                "score constants for `{game}` need max > random (got {} and {})",
                c.max, c.random
            )));
        }
        let (norm_train, norm_test) = (c.normalize(r.train), c.normalize(r.test));
        games.push(GameScore {
            game: game.clone(),
            train: r.train,
            test: r.test,
            gap: r.train - r.test,
            norm_train,
            norm_test,
            norm_gap: norm_train - norm_test,
        });
    }
    let n = games.len() as f64;
    let mean = |f: fn(&GameScore) -> f64| games.iter().map(f).sum::<f64>() / n;
    Ok(ScoreSummary {
        mean_norm_train: mean(|g| g.norm_train),
        mean_norm_test: mean(|g| g.norm_test),
        mean_norm_gap: mean(|g| g.norm_gap),
        games,
    })
}
