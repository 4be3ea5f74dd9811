//! The three PPO loss terms, recorded on a graph.

use crate::nn::{Graph, Var};

/// `−mean(min(r·A, clip(r, 1−ε, 1+ε)·A))` with `r = π(a|s) / π_old`.
/// Returns the loss and the ratio node.
pub fn clip_loss(g: &mut Graph<'_>, logp: Var, pi_old: &[f64], adv: &[f64], eps: f64) -> (Var, Var) {
    let neg_log_old = g.constant_vec(pi_old.iter().map(|p| -p.ln()).collect());
    let log_ratio = g.add(logp, neg_log_old);
    let ratio = g.exp(log_ratio);
    let a = g.constant_vec(adv.to_vec());
    let surr1 = g.mul(ratio, a);
    let clipped = g.clamp_scalar(ratio, 1.0 - eps, 1.0 + eps);
    let surr2 = g.mul(clipped, a);
    let m = g.minimum(surr1, surr2);
    let mean = g.mean(m);
    (g.scale(mean, -1.0), ratio)
}

/// `0.5·mean(max((V − V_targ)², (clip(V, V_old ± ε) − V_targ)²))`.
pub fn value_loss(g: &mut Graph<'_>, v: Var, v_old: &[f64], v_targ: &[f64], eps: f64) -> Var {
    let targ = g.constant_vec(v_targ.to_vec());
    let d1 = g.sub(v, targ);
    let sq1 = g.square(d1);
    let lo = v_old.iter().map(|x| x - eps).collect();
    let hi = v_old.iter().map(|x| x + eps).collect();
    let vc = g.clamp(v, lo, hi);
    let d2 = g.sub(vc, targ);
    let sq2 = g.square(d2);
    let m = g.maximum(sq1, sq2);
    let mean = g.mean(m);
    g.scale(mean, 0.5)
}

/// Mean policy entropy `−Σ_a π log π` from logits `[B, A]`.
pub fn entropy_bonus(g: &mut Graph<'_>, logits: Var) -> Var {
    let p = g.softmax(logits);
    let lp = g.log_softmax(logits);
    let plp = g.mul(p, lp);
    let row = g.sum_last(plp);
    let mean = g.mean(row);
    g.scale(mean, -1.0)
}
