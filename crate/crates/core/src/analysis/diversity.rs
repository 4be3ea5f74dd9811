//! How far augmented samples stray from the batch they were built from.

use crate::error::{Error, Result};

/// Mean over `samples` of the Euclidean distance to the nearest row of
/// `reference`.
pub fn mean_nearest_distance(samples: &[f64], reference: &[f64], obs_len: usize) -> Result<f64> {
    if obs_len == 0 || samples.is_empty() || reference.is_empty() {
        return Err(Error::Shape("diversity needs non-empty batches".into()));
    }
    let total: f64 = samples
        .chunks(obs_len)
        .map(|s| {
            reference
                .chunks(obs_len)
                .map(|r| s.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .sum();
    Ok(total / (samples.len() / obs_len) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_for_subset_and_positive_off_set() {
        let r = [0.0, 0.0, 1.0, 1.0, 2.0, 0.0];
        assert_eq!(mean_nearest_distance(&r[..4], &r, 2).unwrap(), 0.0);
        let d = mean_nearest_distance(&[0.5, 0.5], &r, 2).unwrap();
        assert!((d - 0.5f64.sqrt()).abs() < 1e-15);
    }
}
