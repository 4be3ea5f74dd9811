//! Train/test level splits.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Training levels are `0..n_train`; test levels are the rest of `0..universe`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelSplit {
    pub n_train: u64,
    pub universe: u64,
}

pub fn split_levels(n_train: u64, universe: u64) -> Result<LevelSplit> {
    if n_train == 0 {
        return Err(Error::Config("n_train must be at least 1".into()));
    }
    if n_train >= universe {
        return Err(Error::Config(format!(
            "n_train {n_train} leaves no test levels in a universe of {universe}"
        )));
    }
    Ok(LevelSplit { n_train, universe })
}

impl LevelSplit {
    pub fn train(&self) -> LevelSet {
        LevelSet::Range { start: 0, end: self.n_train }
    }

    pub fn test(&self) -> LevelSet {
        LevelSet::Range { start: self.n_train, end: self.universe }
    }

    pub fn is_train(&self, index: u64) -> bool {
        index < self.n_train
    }
}

/// A set of level indices that episodes are drawn from uniformly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LevelSet {
    Range { start: u64, end: u64 },
    List(Vec<u64>),
}

impl LevelSet {
    pub fn len(&self) -> u64 {
        match self {
            LevelSet::Range { start, end } => end - start,
            LevelSet::List(v) => v.len() as u64,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, index: u64) -> bool {
        match self {
            LevelSet::Range { start, end } => (*start..*end).contains(&index),
            LevelSet::List(v) => v.contains(&index),
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> u64 {
        match self {
            LevelSet::Range { start, end } => rng.random_range(*start..*end),
            LevelSet::List(v) => v[rng.random_range(0..v.len())],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn split_is_disjoint_and_covers_universe() {
        let s = split_levels(500, 1_000_000).unwrap();
        assert_eq!(s.train(), LevelSet::Range { start: 0, end: 500 });
        assert_eq!(s.train().len() + s.test().len(), 1_000_000);
        let mut rng = rng_from_seed(1);
        for _ in 0..1000 {
            let i = s.test().sample(&mut rng);
            assert!(i >= 500 && i < 1_000_000);
            assert!(!s.is_train(i));
        }
    }

    #[test]
    fn degenerate_splits_rejected() {
        assert!(split_levels(0, 10).is_err());
        assert!(split_levels(10, 10).is_err());
        assert!(split_levels(9, 10).is_ok());
    }
}
