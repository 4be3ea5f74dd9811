//! Post-hoc diagnostics of trained networks: Lipschitz ratios of the learned
//! representation, value surfaces over observation triangles, normalized
//! scores and the spread of augmented batches.

pub mod diversity;
pub mod lipschitz;
pub mod scores;
pub mod surface;

pub use diversity::mean_nearest_distance;
pub use lipschitz::{empirical_lipschitz, empirical_lipschitz_with, LipschitzReport};
pub use scores::{normalized_scores, GameReturns, GameScore, ScoreConstants, ScoreSummary};
pub use surface::{barycentric_grid, value_surface, SurfacePoint, ValueSurface};

use rand::Rng as _;

use crate::env::{make_level, random_action, EnvConfig, LevelSeed, LevelSet};
use crate::error::Result;
use crate::mix::{augment_batch, AugmentMethod, AugmentSpec, LambdaSource, MixPlan};
use crate::nn::{Graph, Mode, NetworkParams, PolicyValueNet, Sequential, Tensor};
use crate::rng::Rng;

/// Trunk output (the representation fed to every head) in eval mode.
pub fn trunk_latents(trunk: &Sequential, params: &NetworkParams, obs: &[f64], batch: usize) -> Result<Vec<f64>> {
    let mut shape = vec![batch];
    shape.extend_from_slice(trunk.input_shape());
    let mut g = Graph::with_params(params);
    let x = g.input(Tensor::new(shape, obs.to_vec())?);
    let y = trunk.forward(&mut g, x, Mode::Eval, None)?;
    Ok(g.data(y).to_vec())
}

/// Value head in eval mode.
pub fn policy_values(net: &PolicyValueNet, params: &NetworkParams, obs: &[f64], batch: usize) -> Result<Vec<f64>> {
    let mut shape = vec![batch];
    shape.extend_from_slice(net.trunk.input_shape());
    let mut g = Graph::with_params(params);
    let x = g.input(Tensor::new(shape, obs.to_vec())?);
    let out = net.forward(&mut g, x, Mode::Eval)?;
    Ok(g.data(out.value).to_vec())
}

/// Observations seen by a uniformly random policy: `per_level` snapshots
/// taken at random times from each of `levels` sampled levels.
pub fn observation_corpus(
    cfg: &EnvConfig,
    set: &LevelSet,
    levels: usize,
    per_level: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(levels * per_level * cfg.obs_len());
    for _ in 0..levels {
        let idx = set.sample(rng);
        let mut st = make_level(LevelSeed::new(cfg.game, idx), cfg)?;
        for _ in 0..per_level {
            let walk = rng.random_range(0..16);
            for _ in 0..walk {
                if st.done {
                    break;
                }
                st.step(random_action(rng))?;
            }
            out.extend(st.observation());
        }
    }
    Ok(out)
}

/// Diversity of mixed vs. cutout batches built from the same observations.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DiversityReport {
    pub mixreg: f64,
    pub cutout: f64,
}

pub fn augmentation_diversity(obs: &[f64], obs_size: usize, alpha: f64, rng: &mut Rng) -> Result<DiversityReport> {
    let len = 3 * obs_size * obs_size;
    let n = obs.len() / len;
    let plan = MixPlan::sample(n, LambdaSource::Beta(alpha), rng)?;
    let mixed = plan.mix_rows(obs, len);
    let mut cut = obs.to_vec();
    augment_batch(&AugmentSpec::with_method(AugmentMethod::CutoutColor), &mut cut, obs_size, rng);
    Ok(DiversityReport {
        mixreg: mean_nearest_distance(&mixed, obs, len)?,
        cutout: mean_nearest_distance(&cut, obs, len)?,
    })
}
