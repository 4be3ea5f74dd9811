//! Reward scaling by the running standard deviation of discounted returns.

use serde::{Deserialize, Serialize};

/// Running mean/variance with the parallel (Chan et al.) batch update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningMeanStd {
    pub mean: f64,
    pub var: f64,
    pub count: f64,
}

impl Default for RunningMeanStd {
    fn default() -> Self {
        Self { mean: 0.0, var: 1.0, count: 1e-4 }
    }
}

impl RunningMeanStd {
    pub fn update(&mut self, xs: &[f64]) {
        if xs.is_empty() {
            return;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let delta = mean - self.mean;
        let total = self.count + n;
        let m2 = self.var * self.count + var * n + delta * delta * self.count * n / total;
        self.mean += delta * n / total;
        self.var = m2 / total;
        self.count = total;
    }

    pub fn std(&self) -> f64 {
        (self.var + RewardNormalizer::EPS).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardNormalizer {
    pub stats: RunningMeanStd,
    /// Per-instance discounted return accumulators.
    pub returns: Vec<f64>,
    pub gamma: f64,
    pub clip: f64,
}

impl RewardNormalizer {
    pub const EPS: f64 = 1e-8;
    pub const DEFAULT_CLIP: f64 = 10.0;

    pub fn new(n_envs: usize, gamma: f64) -> Self {
        Self {
            stats: RunningMeanStd::default(),
            returns: vec![0.0; n_envs],
            gamma,
            clip: Self::DEFAULT_CLIP,
        }
    }

    /// Scale one vector step of rewards, updating the return statistics from
    /// the raw stream first.
    pub fn normalize(&mut self, raw: &[f64], dones: &[bool]) -> Vec<f64> {
        assert_eq!(raw.len(), self.returns.len(), "one reward per instance");
        for (ret, r) in self.returns.iter_mut().zip(raw) {
            *ret = *ret * self.gamma + r;
        }
        self.stats.update(&self.returns);
        let std = self.stats.std();
        let out = raw.iter().map(|r| (r / std).clamp(-self.clip, self.clip)).collect();
        for (ret, &d) in self.returns.iter_mut().zip(dones) {
            if d {
                *ret = 0.0;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn running_stats_match_batch_moments() {
        let xs: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin() * 3.0 + 1.0).collect();
        let mut s = RunningMeanStd { mean: 0.0, var: 0.0, count: 0.0 };
        for c in xs.chunks(7) {
            s.update(c);
        }
        let m = xs.iter().sum::<f64>() / 100.0;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 100.0;
        assert!((s.mean - m).abs() < 1e-12);
        assert!((s.var - v).abs() < 1e-12);
    }

    #[test]
    fn zero_stream_stays_zero() {
        let mut n = RewardNormalizer::new(3, 0.99);
        for _ in 0..10 {
            assert_eq!(n.normalize(&[0.0; 3], &[false; 3]), vec![0.0; 3]);
        }
    }

    #[test]
    fn output_is_reward_over_running_std_and_clipped() {
        let mut n = RewardNormalizer::new(2, 0.9);
        n.normalize(&[1.0, -1.0], &[false, true]);
        n.normalize(&[0.5, 2.0], &[false, false]);
        let s = n.stats.std();
        let before = n.clone();
        let out = n.normalize(&[0.3, -0.2], &[false, false]);
        let mut probe = before;
        probe.returns.iter_mut().zip([0.3, -0.2]).for_each(|(r, x)| *r = *r * 0.9 + x);
        probe.stats.update(&probe.returns.clone());
        let s2 = probe.stats.std();
        assert!(s > 0.0);
        assert!((out[0] - 0.3 / s2).abs() < 1e-15);
        // Tiny running std: a unit reward is clipped.
        let mut tiny = RewardNormalizer::new(1, 0.9);
        tiny.stats = RunningMeanStd { mean: 0.0, var: 1e-4, count: 1e9 };
        let out = tiny.normalize(&[5.0], &[false]);
        assert_eq!(out, vec![10.0]);
    }
}
