//! Fixed categorical support and the projection onto it.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Support {
    pub v_min: f64,
    pub v_max: f64,
    pub atoms: Vec<f64>,
    pub delta: f64,
}

impl Support {
    pub fn new(v_min: f64, v_max: f64, n: usize) -> Result<Self> {
        if n < 2 || !(v_max > v_min) {
            return Err(Error::Config(format!(
                "support needs at least 2 atoms and v_max > v_min (got {n}, [{v_min}, {v_max}])"
            )));
        }
        let delta = (v_max - v_min) / (n - 1) as f64;
        let atoms = (0..n).map(|k| v_min + k as f64 * delta).collect();
        Ok(Self { v_min, v_max, atoms, delta })
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// `zᵀp`.
    pub fn mean(&self, probs: &[f64]) -> f64 {
        self.atoms.iter().zip(probs).map(|(z, p)| z * p).sum()
    }

    /// Project masses `probs` sitting on `ret + discount·z` onto `z`: each
    /// shifted atom splits its mass linearly between its two canonical
    /// neighbours, atoms outside the range go to the boundary.
    pub fn project(&self, ret: f64, discount: f64, probs: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut out = vec![0.0; n];
        for (z, &p) in self.atoms.iter().zip(probs) {
            let tz = (ret + discount * z).clamp(self.v_min, self.v_max);
            let b = ((tz - self.v_min) / self.delta).clamp(0.0, (n - 1) as f64);
            let l = b.floor() as usize;
            let u = b.ceil() as usize;
            if l == u {
                out[l] += p;
            } else {
                out[l] += p * (u as f64 - b);
                out[u] += p * (b - l as f64);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_projection() {
        let s = Support::new(-2.0, 3.0, 11).unwrap();
        let p: Vec<f64> = (1..=11).map(|k| k as f64 / 66.0).collect();
        let out = s.project(0.0, 1.0, &p);
        for (a, b) in out.iter().zip(&p) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn midpoint_split() {
        let s = Support::new(0.0, 4.0, 5).unwrap();
        let mut p = vec![0.0; 5];
        p[0] = 1.0;
        let out = s.project(1.5, 1.0, &p);
        assert_eq!(out, vec![0.0, 0.5, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn terminal_collapses_to_point_mass() {
        let s = Support::new(0.0, 10.0, 51).unwrap();
        let p = vec![1.0 / 51.0; 51];
        let out = s.project(3.0, 0.0, &p);
        assert!((out[15] - 1.0).abs() < 1e-12);
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_is_clamped() {
        let s = Support::new(0.0, 1.0, 3).unwrap();
        let out = s.project(5.0, 1.0, &[0.2, 0.3, 0.5]);
        assert_eq!(out, vec![0.0, 0.0, 1.0]);
        let out = s.project(-5.0, 1.0, &[0.2, 0.3, 0.5]);
        assert_eq!(out, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn bad_support_rejected() {
        assert!(Support::new(1.0, 1.0, 51).is_err());
        assert!(Support::new(0.0, 1.0, 1).is_err());
    }
}
