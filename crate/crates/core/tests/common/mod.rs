//! Brute-force reference implementations shared by the integration tests
//! and the acceptance suite. Written independently of the library code.

#![allow(dead_code)]

pub mod gradcheck;

/// `A_t = Σ_k (γλ)^k δ_{t+k}`, summed explicitly per position and stopped
/// after the step that ends the episode.
pub fn gae_oracle(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: &[f64],
    gamma: f64,
    lambda: f64,
) -> Vec<f64> {
    let e = bootstrap.len();
    let t_len = rewards.len() / e;
    let v = |t: usize, env: usize| if t < t_len { values[t * e + env] } else { bootstrap[env] };
    let mut out = vec![0.0; rewards.len()];
    for env in 0..e {
        for t in 0..t_len {
            let mut acc = 0.0;
            for k in 0..(t_len - t) {
                let s = t + k;
                let i = s * e + env;
                let next = if dones[i] { 0.0 } else { v(s + 1, env) };
                let delta = rewards[i] + gamma * next - values[i];
                acc += (gamma * lambda).powi(k as i32) * delta;
                if dones[i] {
                    break;
                }
            }
            out[t * e + env] = acc;
        }
    }
    out
}

/// Per-target-atom linear split: atom `j` receives `p_i · max(0, 1 − |T̂z_i − z_j| / Δz)`
/// from each shifted source atom `i`.
pub fn projection_oracle(v_min: f64, v_max: f64, n: usize, ret: f64, discount: f64, probs: &[f64]) -> Vec<f64> {
    let dz = (v_max - v_min) / (n - 1) as f64;
    let z: Vec<f64> = (0..n).map(|k| v_min + k as f64 * dz).collect();
    let mut out = vec![0.0; n];
    for (i, &p) in probs.iter().enumerate() {
        let tz = (ret + discount * z[i]).max(v_min).min(v_max);
        for j in 0..n {
            let w = 1.0 - (tz - z[j]).abs() / dz;
            if w > 0.0 {
                out[j] += p * w;
            }
        }
    }
    out
}

/// Softmax over a slice.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Mean and variance of a symmetric Beta(α, α).
pub fn beta_moments(alpha: f64) -> (f64, f64) {
    (0.5, 1.0 / (4.0 * (2.0 * alpha + 1.0)))
}
