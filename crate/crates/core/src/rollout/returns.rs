//! Advantage and return estimators.

use crate::error::{Error, Result};

/// Generalized advantage estimation over a time-major `[T, E]` layout.
///
/// `values[t·E + e]` is `V(s_t)` for instance `e`, `dones[t·E + e]` marks that
/// the step taken at `t` ended the episode, and `bootstrap[e]` is `V(s_T)`.
/// Returns `(advantages, value_targets)` with `targets = advantages + values`.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: &[f64],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let e = bootstrap.len();
    let n = rewards.len();
    if e == 0 || values.len() != n || dones.len() != n || n % e != 0 {
        return Err(Error::Shape(format!(
            "gae: {n} rewards, {} values, {} dones, {e} bootstrap values",
            values.len(),
            dones.len()
        )));
    }
    let t_len = n / e;
    let mut adv = vec![0.0; n];
    for env in 0..e {
        let mut running = 0.0;
        for t in (0..t_len).rev() {
            let i = t * e + env;
            let next_v = if t + 1 < t_len { values[i + e] } else { bootstrap[env] };
            let live = if dones[i] { 0.0 } else { 1.0 };
            let delta = rewards[i] + gamma * next_v * live - values[i];
            running = delta + gamma * lambda * live * running;
            adv[i] = running;
        }
    }
    let targets = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, targets))
}

/// A truncated multi-step return starting at the head of a window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NStepReturn {
    pub ret: f64,
    /// Product of per-step discounts; zero once the episode terminated.
    pub discount: f64,
    /// Offset from the window start of the state to bootstrap from.
    pub bootstrap_offset: usize,
}

/// `R = Σ_k γ_{(k)} r_k` over the first `n` steps of the window, where the
/// per-step discount is `γ` and becomes 0 at termination.
pub fn nstep_return(rewards: &[f64], dones: &[bool], n: usize, gamma: f64) -> Result<NStepReturn> {
    if n == 0 {
        return Err(Error::Config("n-step horizon must be at least 1".into()));
    }
    if rewards.len() != dones.len() {
        return Err(Error::Shape("nstep_return: rewards and dones differ in length".into()));
    }
    let steps = n.min(rewards.len());
    let mut ret = 0.0;
    let mut discount = 1.0;
    for k in 0..steps {
        ret += discount * rewards[k];
        discount *= if dones[k] { 0.0 } else { gamma };
        if dones[k] {
            break;
        }
    }
    Ok(NStepReturn {
        ret,
        discount,
        bootstrap_offset: steps,
    })
}

/// Rescale to zero mean and unit standard deviation.
pub fn standardize(xs: &mut [f64]) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return;
    }
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt() + 1e-8;
    for x in xs {
        *x = (*x - mean) / std;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_zero_is_td_error() {
        let r = [1.0, 0.5, -1.0];
        let v = [0.2, 0.4, 0.1];
        let d = [false, false, false];
        let (a, _) = gae(&r, &v, &d, &[0.3], 0.9, 0.0).unwrap();
        let want = [1.0 + 0.9 * 0.4 - 0.2, 0.5 + 0.9 * 0.1 - 0.4, -1.0 + 0.9 * 0.3 - 0.1];
        for (x, y) in a.iter().zip(want) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn single_step_episode() {
        let (a, t) = gae(&[1.0], &[0.0], &[true], &[5.0], 0.999, 0.95).unwrap();
        assert_eq!(a, vec![1.0]);
        assert_eq!(t, vec![1.0]);
    }

    #[test]
    fn length_mismatch_errors() {
        assert!(gae(&[1.0, 2.0], &[0.0], &[false, false], &[0.0], 0.9, 0.9).is_err());
        assert!(gae(&[1.0, 2.0, 3.0], &[0.0; 3], &[false; 3], &[0.0, 0.0], 0.9, 0.9).is_err());
    }

    #[test]
    fn nstep_examples() {
        let r = nstep_return(&[1.0, 2.0, 4.0], &[false; 3], 3, 0.5).unwrap();
        assert_eq!(r, NStepReturn { ret: 3.0, discount: 0.125, bootstrap_offset: 3 });
        let one = nstep_return(&[2.0], &[false], 1, 0.9).unwrap();
        assert_eq!((one.ret, one.discount), (2.0, 0.9));
        let term = nstep_return(&[2.0], &[true], 1, 0.9).unwrap();
        assert_eq!((term.ret, term.discount), (2.0, 0.0));
        let cut = nstep_return(&[1.0, 2.0, 4.0], &[false, true, false], 3, 0.5).unwrap();
        assert_eq!((cut.ret, cut.discount), (2.0, 0.0));
        assert!(nstep_return(&[1.0], &[false], 0, 0.5).is_err());
    }

    #[test]
    fn standardize_moments() {
        let mut x = vec![1.0, 2.0, 3.0, 6.0];
        standardize(&mut x);
        let m: f64 = x.iter().sum::<f64>() / 4.0;
        let v: f64 = x.iter().map(|a| a * a).sum::<f64>() / 4.0;
        assert!(m.abs() < 1e-12);
        assert!((v - 1.0).abs() < 1e-6);
    }
}
