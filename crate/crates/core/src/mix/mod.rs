//! Mixture regularization: Beta-distributed convex combinations of
//! observations and their supervision signals, plus the baseline image
//! augmentations.

mod augment;

use rand::Rng as _;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub use augment::{
    augment_batch, bilinear_resize, crop_resize_size, cutout_color, random_conv, random_conv_kernel,
    random_conv_with_kernel, random_crop, random_crop_at,
};

pub const DEFAULT_ALPHA: f64 = 0.2;
/// Values of α covered by the ablation sweep.
pub const ALPHA_LADDER: [f64; 4] = [0.1, 0.2, 0.5, 1.0];

/// Draw λ ~ Beta(α, α) as `X / (X + Y)` with `X, Y ~ Gamma(α, 1)`.
pub fn sample_lambda(alpha: f64, rng: &mut Rng) -> Result<f64> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("mix alpha must be positive, got {alpha}")));
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::Config(e.to_string()))?;
    let x = gamma.sample(rng);
    let y = gamma.sample(rng);
    if x + y > 0.0 {
        Ok(x / (x + y))
    } else {
        // Both draws underflowed (possible for tiny α): the limit is a fair coin.
        Ok(if rng.random::<bool>() { 1.0 } else { 0.0 })
    }
}

/// Where mixing coefficients come from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaSource {
    Beta(f64),
    /// Every element uses this λ; partners are still drawn from the stream.
    Fixed(f64),
}

/// Partner index and coefficient for every element of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct MixPlan {
    pub partners: Vec<usize>,
    pub lambdas: Vec<f64>,
}

impl MixPlan {
    /// Partners uniform over the batch with replacement (self-pairing
    /// allowed), one λ per element.
    pub fn sample(n: usize, source: LambdaSource, rng: &mut Rng) -> Result<Self> {
        if n < 2 {
            return Err(Error::BatchTooSmall { needed: 2, got: n });
        }
        let partners = (0..n).map(|_| rng.random_range(0..n)).collect();
        let lambdas = match source {
            LambdaSource::Beta(alpha) => (0..n).map(|_| sample_lambda(alpha, rng)).collect::<Result<_>>()?,
            LambdaSource::Fixed(l) => {
                if !(0.0..=1.0).contains(&l) {
                    return Err(Error::Config(format!("fixed lambda {l} outside [0, 1]")));
                }
                vec![l; n]
            }
        };
        Ok(Self { partners, lambdas })
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    /// `i` when `λ_i ≥ 0.5`, otherwise its partner.
    pub fn dominant(&self, i: usize) -> usize {
        if self.lambdas[i] >= 0.5 {
            i
        } else {
            self.partners[i]
        }
    }

    /// `λ·y_i + (1−λ)·y_j` for a per-element scalar.
    pub fn mix_scalars(&self, ys: &[f64]) -> Vec<f64> {
        (0..self.len())
            .map(|i| {
                let l = self.lambdas[i];
                l * ys[i] + (1.0 - l) * ys[self.partners[i]]
            })
            .collect()
    }

    /// Row-wise convex combination of `width`-wide rows.
    pub fn mix_rows(&self, rows: &[f64], width: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * width);
        for i in 0..self.len() {
            let (l, j) = (self.lambdas[i], self.partners[i]);
            let a = &rows[i * width..(i + 1) * width];
            let b = &rows[j * width..(j + 1) * width];
            out.extend(a.iter().zip(b).map(|(x, y)| l * x + (1.0 - l) * y));
        }
        out
    }

    /// Per-element value taken from the dominant side.
    pub fn pick<T: Clone>(&self, xs: &[T]) -> Vec<T> {
        (0..self.len()).map(|i| xs[self.dominant(i)].clone()).collect()
    }

    /// Rows taken from the dominant side.
    pub fn pick_rows(&self, rows: &[f64], width: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * width);
        for i in 0..self.len() {
            let d = self.dominant(i);
            out.extend_from_slice(&rows[d * width..(d + 1) * width]);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixMode {
    /// Observations and supervision interpolated.
    Full,
    /// Observations interpolated; supervision and action from the dominant side.
    ObsOnly,
}

/// A batch whose observations and supervision can be recombined by a plan.
pub trait Mixable: Sized {
    fn batch_len(&self) -> usize;
    fn mixed(&self, plan: &MixPlan, mode: MixMode) -> Self;
}

pub fn mix_with<B: Mixable>(batch: &B, source: LambdaSource, mode: MixMode, rng: &mut Rng) -> Result<(B, MixPlan)> {
    let plan = MixPlan::sample(batch.batch_len(), source, rng)?;
    Ok((batch.mixed(&plan, mode), plan))
}

pub fn mix_batch<B: Mixable>(batch: &B, alpha: f64, rng: &mut Rng) -> Result<(B, MixPlan)> {
    mix_with(batch, LambdaSource::Beta(alpha), MixMode::Full, rng)
}

pub fn mix_obs_only<B: Mixable>(batch: &B, alpha: f64, rng: &mut Rng) -> Result<(B, MixPlan)> {
    mix_with(batch, LambdaSource::Beta(alpha), MixMode::ObsOnly, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AugmentMethod {
    None,
    Mixreg,
    MixobsOnly,
    CutoutColor,
    RandomCrop,
    RandomConv,
}

impl AugmentMethod {
    pub const ALL: [AugmentMethod; 6] = [
        AugmentMethod::None,
        AugmentMethod::Mixreg,
        AugmentMethod::MixobsOnly,
        AugmentMethod::CutoutColor,
        AugmentMethod::RandomCrop,
        AugmentMethod::RandomConv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AugmentMethod::None => "none",
            AugmentMethod::Mixreg => "mixreg",
            AugmentMethod::MixobsOnly => "mixobs-only",
            AugmentMethod::CutoutColor => "cutout-color",
            AugmentMethod::RandomCrop => "random-crop",
            AugmentMethod::RandomConv => "random-conv",
        }
    }

    pub fn mix_mode(self) -> Option<MixMode> {
        match self {
            AugmentMethod::Mixreg => Some(MixMode::Full),
            AugmentMethod::MixobsOnly => Some(MixMode::ObsOnly),
            _ => None,
        }
    }
}

/// The augmentation applied to every optimization batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSpec {
    pub method: AugmentMethod,
    pub mix_alpha: f64,
    /// Forces every λ to this value (testing hook).
    pub fixed_lambda: Option<f64>,
    pub cutout_min_side: usize,
    /// Defaults to half the observation side.
    pub cutout_max_side: Option<usize>,
    /// Upscale factor before cropping back to the original size.
    pub crop_scale: f64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            method: AugmentMethod::None,
            mix_alpha: DEFAULT_ALPHA,
            fixed_lambda: None,
            cutout_min_side: 2,
            cutout_max_side: None,
            crop_scale: 75.0 / 64.0,
        }
    }
}

impl AugmentSpec {
    pub fn with_method(method: AugmentMethod) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn validate(&self, obs_size: usize) -> Result<()> {
        if !(self.mix_alpha > 0.0 && self.mix_alpha.is_finite()) {
            return Err(Error::Config(format!("mix_alpha must be positive, got {}", self.mix_alpha)));
        }
        if let Some(l) = self.fixed_lambda {
            if !(0.0..=1.0).contains(&l) {
                return Err(Error::Config(format!("fixed_lambda {l} outside [0, 1]")));
            }
        }
        let max = self.cutout_max_side.unwrap_or(obs_size / 2);
        if self.cutout_min_side == 0 || self.cutout_min_side > max || max > obs_size {
            return Err(Error::Config(format!(
                "cutout sides [{}, {max}] invalid for {obs_size}-pixel observations",
                self.cutout_min_side
            )));
        }
        if !(self.crop_scale >= 1.0 && self.crop_scale <= 4.0) {
            return Err(Error::Config("crop_scale must be in [1, 4]".into()));
        }
        Ok(())
    }

    pub fn lambda_source(&self) -> LambdaSource {
        match self.fixed_lambda {
            Some(l) => LambdaSource::Fixed(l),
            None => LambdaSource::Beta(self.mix_alpha),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[derive(Debug, Clone, PartialEq)]
    struct Toy {
        obs: Vec<f64>,
        width: usize,
        actions: Vec<usize>,
        y: Vec<f64>,
    }

    impl Mixable for Toy {
        fn batch_len(&self) -> usize {
            self.actions.len()
        }

        fn mixed(&self, plan: &MixPlan, mode: MixMode) -> Self {
            Toy {
                obs: plan.mix_rows(&self.obs, self.width),
                width: self.width,
                actions: plan.pick(&self.actions),
                y: match mode {
                    MixMode::Full => plan.mix_scalars(&self.y),
                    MixMode::ObsOnly => plan.pick(&self.y),
                },
            }
        }
    }

    fn toy() -> Toy {
        Toy {
            obs: vec![0.2, 0.2, 0.6, 0.6, 0.9, 0.1],
            width: 2,
            actions: vec![0, 1, 2],
            y: vec![1.0, -1.0, 3.0],
        }
    }

    #[test]
    fn constant_observations_mix_to_constant() {
        let plan = MixPlan { partners: vec![1, 0, 2], lambdas: vec![0.25, 1.0, 0.5] };
        let m = toy().mixed(&plan, MixMode::Full);
        assert!((m.obs[0] - 0.5).abs() < 1e-15 && (m.obs[1] - 0.5).abs() < 1e-15);
        assert_eq!(m.actions, vec![1, 1, 2]);
    }

    #[test]
    fn endpoints() {
        let b = toy();
        let mut rng = rng_from_seed(0);
        let (one, _) = mix_with(&b, LambdaSource::Fixed(1.0), MixMode::Full, &mut rng).unwrap();
        assert_eq!(one, b);
        let (zero, plan) = mix_with(&b, LambdaSource::Fixed(0.0), MixMode::Full, &mut rng).unwrap();
        for i in 0..3 {
            let j = plan.partners[i];
            assert_eq!(zero.actions[i], b.actions[j]);
            assert_eq!(zero.y[i], b.y[j]);
            assert_eq!(&zero.obs[2 * i..2 * i + 2], &b.obs[2 * j..2 * j + 2]);
        }
    }

    #[test]
    fn obs_only_takes_supervision_from_dominant_side() {
        let plan = MixPlan { partners: vec![1, 2, 0], lambdas: vec![0.9, 0.5, 0.3] };
        let full = toy().mixed(&plan, MixMode::Full);
        let obs = toy().mixed(&plan, MixMode::ObsOnly);
        assert_eq!(full.obs, obs.obs);
        assert_eq!(obs.y, vec![1.0, -1.0, 1.0]);
        assert!(full.y.iter().zip(&obs.y).all(|(a, b)| a != b));
    }

    #[test]
    fn small_batches_rejected() {
        let mut rng = rng_from_seed(0);
        assert!(matches!(
            MixPlan::sample(1, LambdaSource::Beta(0.2), &mut rng),
            Err(Error::BatchTooSmall { needed: 2, got: 1 })
        ));
        assert!(sample_lambda(0.0, &mut rng).is_err());
        assert!(sample_lambda(-1.0, &mut rng).is_err());
    }

    #[test]
    fn large_alpha_concentrates_at_half() {
        let mut rng = rng_from_seed(11);
        let n = 100_000;
        let mean = (0..n).map(|_| sample_lambda(1e4, &mut rng).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01);
    }

    #[test]
    fn spec_validation() {
        assert!(AugmentSpec::default().validate(32).is_ok());
        let bad = AugmentSpec { mix_alpha: 0.0, ..AugmentSpec::default() };
        assert!(bad.validate(32).is_err());
        let bad = AugmentSpec { cutout_min_side: 20, ..AugmentSpec::default() };
        assert!(bad.validate(32).is_err());
        let parsed: AugmentSpec = toml::from_str("method = \"mixobs-only\"\nmix_alpha = 0.5").unwrap();
        assert_eq!(parsed.method, AugmentMethod::MixobsOnly);
        assert!(toml::from_str::<AugmentSpec>("mthod = \"none\"").is_err());
    }
}
