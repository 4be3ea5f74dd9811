//! Empirical Lipschitz ratios of a representation over observation pairs.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    /// Every ratio, in draw order (not persisted in the JSON summary).
    #[serde(skip_serializing, default)]
    pub ratios: Vec<f64>,
    /// Pairs drawn, including excluded zero-distance pairs.
    pub pairs_drawn: usize,
    pub max: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub min: f64,
    pub mean: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

impl LipschitzReport {
    pub fn from_ratios(ratios: Vec<f64>, pairs_drawn: usize) -> Result<Self> {
        if ratios.is_empty() {
            return Err(Error::Config("every sampled pair has zero observation distance".into()));
        }
        let mut s = ratios.clone();
        s.sort_by(f64::total_cmp);
        Ok(Self {
            pairs_drawn,
            max: *s.last().unwrap(),
            min: s[0],
            q1: quantile(&s, 0.25),
            median: quantile(&s, 0.5),
            q3: quantile(&s, 0.75),
            mean: s.iter().sum::<f64>() / s.len() as f64,
            ratios,
        })
    }
}

/// `‖f(s_i) − f(s_j)‖ / ‖s_i − s_j‖` over `n_pairs` index pairs drawn
/// uniformly with replacement from the corpus; zero-distance pairs are
/// skipped. `latents` holds `f` of every corpus element, `latent_len` wide.
pub fn empirical_lipschitz(
    corpus: &[f64],
    obs_len: usize,
    latents: &[f64],
    latent_len: usize,
    n_pairs: usize,
    rng: &mut Rng,
) -> Result<LipschitzReport> {
    let m = corpus.len() / obs_len;
    if m < 2 || latents.len() != m * latent_len {
        return Err(Error::Shape(format!(
            "lipschitz: {m} observations with {} latent values",
            latents.len()
        )));
    }
    let mut ratios = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        let i = rng.random_range(0..m);
        let j = rng.random_range(0..m);
        let dx = dist(&corpus[i * obs_len..(i + 1) * obs_len], &corpus[j * obs_len..(j + 1) * obs_len]);
        if dx == 0.0 {
            continue;
        }
        let dy = dist(
            &latents[i * latent_len..(i + 1) * latent_len],
            &latents[j * latent_len..(j + 1) * latent_len],
        );
        ratios.push(dy / dx);
    }
    LipschitzReport::from_ratios(ratios, n_pairs)
}

/// Convenience wrapper computing latents with `f` in chunks.
pub fn empirical_lipschitz_with(
    corpus: &[f64],
    obs_len: usize,
    mut f: impl FnMut(&[f64], usize) -> Result<Vec<f64>>,
    n_pairs: usize,
    rng: &mut Rng,
) -> Result<LipschitzReport> {
    let m = corpus.len() / obs_len;
    let mut latents = Vec::new();
    let mut width = 0;
    for chunk in corpus.chunks(64 * obs_len) {
        let b = chunk.len() / obs_len;
        let out = f(chunk, b)?;
        width = out.len() / b;
        latents.extend(out);
    }
    if m < 2 {
        return Err(Error::Config("lipschitz corpus needs at least 2 observations".into()));
    }
    empirical_lipschitz(corpus, obs_len, &latents, width, n_pairs, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn corpus(m: usize, d: usize, seed: u64) -> Vec<f64> {
        let mut rng = rng_from_seed(seed);
        (0..m * d).map(|_| rng.random()).collect()
    }

    #[test]
    fn identity_and_scaling() {
        let c = corpus(20, 5, 1);
        let r = empirical_lipschitz(&c, 5, &c, 5, 200, &mut rng_from_seed(0)).unwrap();
        assert!(r.ratios.iter().all(|x| (x - 1.0).abs() < 1e-12));
        let scaled: Vec<f64> = c.iter().map(|x| -3.0 * x).collect();
        let r = empirical_lipschitz(&c, 5, &scaled, 5, 200, &mut rng_from_seed(0)).unwrap();
        assert!(r.ratios.iter().all(|x| (x - 3.0).abs() < 1e-12));
        // Self-pairs are excluded.
        assert!(r.ratios.len() < 200);
    }

    #[test]
    fn identical_corpus_is_an_error() {
        let c = vec![0.5; 30];
        assert!(empirical_lipschitz(&c, 3, &c, 3, 50, &mut rng_from_seed(0)).is_err());
    }

    #[test]
    fn quantiles_are_ordered() {
        let r = LipschitzReport::from_ratios(vec![4.0, 1.0, 3.0, 2.0, 5.0], 5).unwrap();
        assert_eq!((r.min, r.q1, r.median, r.q3, r.max), (1.0, 2.0, 3.0, 4.0, 5.0));
        assert_eq!(r.mean, 3.0);
    }
}
