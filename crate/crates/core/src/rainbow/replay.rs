//! Prioritized replay over a frame ring with n-step records.
//!
//! The ring holds one slot per vector step: the `E` observations (as bytes),
//! actions, rewards and done flags. Record `slot·E + e` is the transition of
//! instance `e` at that slot; it becomes sampleable once the observation `n`
//! slots later has been written, so its n-step return and bootstrap state are
//! read straight from the ring.

use rand::Rng as _;

use super::SumMinTree;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::rollout::{nstep_return, NStepReturn};

#[derive(Debug, Clone)]
pub struct ReplayConfig {
    /// Capacity in transitions (rounded down to whole slots).
    pub capacity: usize,
    pub n_step: usize,
    pub gamma: f64,
    pub omega: f64,
    pub beta: f64,
    pub eps_prio: f64,
}

/// One sampled record with its n-step fields.
#[derive(Debug, Clone, PartialEq)]
pub struct Sampled {
    pub record: usize,
    /// Absolute slot number, used to detect overwritten records.
    pub stamp: u64,
    pub obs: Vec<u8>,
    pub action: usize,
    pub nstep: NStepReturn,
    pub next_obs: Vec<u8>,
    pub weight: f64,
    pub prob: f64,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    cfg: ReplayConfig,
    envs: usize,
    obs_len: usize,
    slots: usize,
    obs: Vec<u8>,
    actions: Vec<usize>,
    rewards: Vec<f64>,
    dones: Vec<bool>,
    /// Absolute slot number stored in each ring position.
    slot_stamp: Vec<Option<u64>>,
    /// Next absolute slot to write.
    head: u64,
    tree: SumMinTree,
    max_priority: f64,
    stale_updates: u64,
}

impl ReplayBuffer {
    pub fn new(cfg: ReplayConfig, envs: usize, obs_len: usize) -> Result<Self> {
        if envs == 0 || cfg.n_step == 0 {
            return Err(Error::Config("replay needs at least one instance and n ≥ 1".into()));
        }
        let slots = cfg.capacity / envs;
        if slots <= cfg.n_step {
            return Err(Error::Config(format!(
                "replay capacity {} too small for {envs} instances and n = {}",
                cfg.capacity, cfg.n_step
            )));
        }
        if !(cfg.omega >= 0.0 && cfg.beta >= 0.0 && cfg.eps_prio > 0.0) {
            return Err(Error::Config("replay exponents must be ≥ 0 and eps_prio > 0".into()));
        }
        Ok(Self {
            envs,
            obs_len,
            slots,
            obs: vec![0; slots * envs * obs_len],
            actions: vec![0; slots * envs],
            rewards: vec![0.0; slots * envs],
            dones: vec![false; slots * envs],
            slot_stamp: vec![None; slots],
            head: 0,
            tree: SumMinTree::new(slots * envs),
            max_priority: 1.0,
            stale_updates: 0,
            cfg,
        })
    }

    pub fn config(&self) -> &ReplayConfig {
        &self.cfg
    }

    /// Number of sampleable records.
    pub fn len(&self) -> usize {
        let written = self.head.min(self.slots as u64) as usize;
        written.saturating_sub(self.cfg.n_step) * self.envs
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stale_updates(&self) -> u64 {
        self.stale_updates
    }

    pub fn max_priority(&self) -> f64 {
        self.max_priority
    }

    fn set_slot_priority(&mut self, slot_pos: usize, value: Option<f64>) {
        for e in 0..self.envs {
            let r = slot_pos * self.envs + e;
            match value {
                Some(p) => self.tree.set(r, p.powf(self.cfg.omega)),
                None => self.tree.clear(r),
            }
        }
    }

    /// Append one vector step: observations before acting, actions taken,
    /// rewards received and done flags.
    pub fn push(&mut self, obs: &[u8], actions: &[usize], rewards: &[f64], dones: &[bool]) -> Result<()> {
        let e = self.envs;
        if obs.len() != e * self.obs_len || actions.len() != e || rewards.len() != e || dones.len() != e {
            return Err(Error::Shape("replay push: per-instance field lengths differ".into()));
        }
        let pos = (self.head % self.slots as u64) as usize;
        // The record being overwritten and the ones it bootstrapped from go stale.
        self.set_slot_priority(pos, None);
        self.obs[pos * e * self.obs_len..(pos + 1) * e * self.obs_len].copy_from_slice(obs);
        self.actions[pos * e..(pos + 1) * e].copy_from_slice(actions);
        self.rewards[pos * e..(pos + 1) * e].copy_from_slice(rewards);
        self.dones[pos * e..(pos + 1) * e].copy_from_slice(dones);
        self.slot_stamp[pos] = Some(self.head);
        // The slot n steps back now has its bootstrap observation.
        if self.head >= self.cfg.n_step as u64 {
            let ready = ((self.head - self.cfg.n_step as u64) % self.slots as u64) as usize;
            let p = self.max_priority;
            self.set_slot_priority(ready, Some(p));
        }
        self.head += 1;
        Ok(())
    }

    fn pos_of(&self, stamp: u64) -> usize {
        (stamp % self.slots as u64) as usize
    }

    /// n-step fields of a record, read from the ring.
    pub fn record(&self, record: usize) -> Option<Sampled> {
        let (pos, env) = (record / self.envs, record % self.envs);
        let stamp = self.slot_stamp.get(pos).copied().flatten()?;
        if stamp + self.cfg.n_step as u64 >= self.head {
            return None;
        }
        let n = self.cfg.n_step;
        let mut rewards = Vec::with_capacity(n);
        let mut dones = Vec::with_capacity(n);
        for k in 0..n {
            let p = self.pos_of(stamp + k as u64);
            rewards.push(self.rewards[p * self.envs + env]);
            dones.push(self.dones[p * self.envs + env]);
        }
        let nstep = nstep_return(&rewards, &dones, n, self.cfg.gamma).ok()?;
        let boot = self.pos_of(stamp + n as u64);
        let obs_at = |p: usize| {
            let start = (p * self.envs + env) * self.obs_len;
            self.obs[start..start + self.obs_len].to_vec()
        };
        Some(Sampled {
            record,
            stamp,
            obs: obs_at(pos),
            action: self.actions[pos * self.envs + env],
            nstep,
            next_obs: obs_at(boot),
            weight: 1.0,
            prob: 0.0,
        })
    }

    /// Sampling probability of a record.
    pub fn probability(&self, record: usize) -> f64 {
        self.tree.get(record) / self.tree.total()
    }

    /// `(N·P)^−β` normalized by the largest weight in the buffer.
    pub fn weight(&self, record: usize) -> f64 {
        let n = self.len() as f64;
        let p = self.probability(record);
        let p_min = self.tree.min() / self.tree.total();
        (n * p).powf(-self.cfg.beta) / (n * p_min).powf(-self.cfg.beta)
    }

    /// Stratified proportional sampling of `batch` records.
    pub fn sample(&self, batch: usize, rng: &mut Rng) -> Result<Vec<Sampled>> {
        if self.is_empty() {
            return Err(Error::BatchTooSmall { needed: 1, got: 0 });
        }
        let total = self.tree.total();
        let seg = total / batch as f64;
        let mut out = Vec::with_capacity(batch);
        for k in 0..batch {
            let u = (k as f64 + rng.random::<f64>()) * seg;
            let r = self.tree.find(u.min(total * (1.0 - 1e-12)));
            let mut s = self.record(r).expect("tree only holds sampleable records");
            s.prob = self.probability(r);
            s.weight = self.weight(r);
            out.push(s);
        }
        Ok(out)
    }

    /// Set the priority of each record to `kl + eps_prio`. Records that were
    /// overwritten since sampling are skipped and counted.
    pub fn update_priorities(&mut self, sampled: &[(usize, u64)], kl: &[f64]) {
        for (&(record, stamp), &l) in sampled.iter().zip(kl) {
            let pos = record / self.envs;
            let live = self.slot_stamp.get(pos).copied().flatten() == Some(stamp)
                && stamp + (self.cfg.n_step as u64) < self.head;
            if !live {
                self.stale_updates += 1;
                continue;
            }
            let p = l.max(0.0) + self.cfg.eps_prio;
            self.max_priority = self.max_priority.max(p);
            self.tree.set(record, p.powf(self.cfg.omega));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn cfg(capacity: usize, omega: f64, beta: f64) -> ReplayConfig {
        ReplayConfig { capacity, n_step: 2, gamma: 0.5, omega, beta, eps_prio: 1e-6 }
    }

    fn fill(buf: &mut ReplayBuffer, steps: u8) {
        for t in 0..steps {
            let e = buf.envs;
            let obs: Vec<u8> = (0..e * buf.obs_len).map(|i| t.wrapping_mul(7).wrapping_add(i as u8)).collect();
            let acts: Vec<usize> = (0..e).map(|k| (t as usize + k) % 3).collect();
            let rew: Vec<f64> = (0..e).map(|k| t as f64 + k as f64 * 0.1).collect();
            let done: Vec<bool> = (0..e).map(|k| (t as usize + k) % 5 == 4).collect();
            buf.push(&obs, &acts, &rew, &done).unwrap();
        }
    }

    #[test]
    fn records_become_sampleable_after_n_steps() {
        let mut b = ReplayBuffer::new(cfg(40, 0.5, 0.4), 2, 3).unwrap();
        fill(&mut b, 2);
        assert_eq!(b.len(), 0);
        fill(&mut b, 1);
        assert_eq!(b.len(), 2);
        let r = b.record(0).unwrap();
        // Instance 0, slot 0: rewards (0, 1), no termination.
        assert_eq!(r.nstep.ret, 0.0 + 0.5 * 1.0);
        assert_eq!(r.nstep.discount, 0.25);
        assert!(b.record(2).is_none());
    }

    #[test]
    fn bootstrap_observation_is_n_slots_later() {
        let mut b = ReplayBuffer::new(cfg(40, 0.5, 0.4), 2, 3).unwrap();
        fill(&mut b, 6);
        let r = b.record(2 * 1 + 1).unwrap();
        let later = b.record(2 * 3 + 1).unwrap();
        assert_eq!(r.next_obs, later.obs);
    }

    #[test]
    fn wrap_around_evicts_oldest_and_counts_stale_updates() {
        let mut b = ReplayBuffer::new(cfg(8, 0.5, 0.4), 2, 1).unwrap();
        fill(&mut b, 4);
        let s = b.record(0).unwrap();
        fill(&mut b, 1);
        // Slot 0 now holds step 4.
        assert_ne!(b.record(0).map(|r| r.stamp), Some(s.stamp));
        b.update_priorities(&[(0, s.stamp)], &[1.0]);
        assert_eq!(b.stale_updates(), 1);
        assert_eq!(b.len(), 4);
    }

    #[test]
    fn equal_priorities_sample_uniformly() {
        let mut b = ReplayBuffer::new(cfg(100, 0.5, 0.4), 1, 1).unwrap();
        fill(&mut b, 6);
        let mut rng = rng_from_seed(1);
        let mut counts = [0usize; 4];
        for _ in 0..4000 {
            for s in b.sample(4, &mut rng).unwrap() {
                counts[s.record] += 1;
                assert!((s.weight - 1.0).abs() < 1e-12);
            }
        }
        for c in counts {
            assert!((c as f64 / 16000.0 - 0.25).abs() < 0.02);
        }
    }

    #[test]
    fn omega_zero_ignores_priorities() {
        let mut b = ReplayBuffer::new(cfg(100, 0.0, 0.4), 1, 1).unwrap();
        fill(&mut b, 5);
        b.update_priorities(&[(0, 0), (1, 1)], &[100.0, 0.0]);
        for r in 0..3 {
            assert!((b.probability(r) - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn full_importance_correction_is_unbiased() {
        let mut b = ReplayBuffer::new(cfg(100, 0.5, 1.0), 1, 1).unwrap();
        fill(&mut b, 5);
        b.update_priorities(&[(0, 0), (1, 1), (2, 2)], &[3.0, 0.5, 1.0]);
        let f = [2.0, -1.0, 7.0];
        let max_w = (0..3).map(|r| (3.0 * b.probability(r)).recip()).fold(0.0, f64::max);
        let weighted: f64 = (0..3).map(|r| b.probability(r) * b.weight(r) * f[r]).sum::<f64>() * max_w;
        let plain = f.iter().sum::<f64>() / 3.0;
        assert!((weighted - plain).abs() < 1e-12);
    }
}
