//! Central finite-difference checks of the training losses on small
//! random networks. Each check returns the worst relative error observed.

use mixreg::nn::{l2_penalty, Graph, LayerSpec, Mode, NetworkParams, ParamKind, Sequential, Tensor, Var};
use mixreg::ppo::{clip_loss, entropy_bonus, value_loss};
use mixreg::rainbow::kl_loss;
use mixreg::rng::{rng_from_seed, Rng};
use rand::Rng as _;

pub const REL_TOL: f64 = 1e-3;
const H: f64 = 1e-5;


struct Setup {
    store: NetworkParams,
    net: Sequential,
    x: Tensor,
}

fn setup(inputs: usize, outputs: usize, batch: usize, seed: u64) -> Setup {
    let mut rng = rng_from_seed(seed);
    let mut store = NetworkParams::new();
    let net = Sequential::build(
        "net",
        &[inputs],
        vec![
            LayerSpec::Dense { in_features: inputs, out_features: 8 },
            LayerSpec::Relu,
            LayerSpec::Dense { in_features: 8, out_features: outputs },
        ],
        1.0,
        &mut store,
        &mut rng,
    )
    .unwrap();
    let ids: Vec<_> = store.iter().filter(|(_, p)| p.kind == ParamKind::Bias).map(|(id, _)| id).collect();
    for id in ids {
        for v in store.value_mut(id).data_mut() {
            *v = rng.random_range(-0.3..0.3);
        }
    }
    let x = Tensor::new(vec![batch, inputs], (0..batch * inputs).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    Setup { store, net, x }
}

/// Compare analytic and numeric gradients of `loss(graph, net output)`.
fn check(s: &mut Setup, loss: &dyn Fn(&mut Graph<'_>, Var) -> Var, rng: &mut Rng) -> f64 {
    let eval = |store: &NetworkParams| {
        let mut g = Graph::with_params(store);
        let x = g.input(s.x.clone());
        let y = s.net.forward(&mut g, x, Mode::Train, None).unwrap();
        let l = loss(&mut g, y);
        g.value(l).item()
    };
    let grads = {
        let mut g = Graph::with_params(&s.store);
        let x = g.input(s.x.clone());
        let y = s.net.forward(&mut g, x, Mode::Train, None).unwrap();
        let l = loss(&mut g, y);
        g.backward(l).unwrap()
    };
    let ids: Vec<_> = s.store.iter().map(|(id, _)| id).collect();
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for id in ids {
        let analytic = grads.get(id).unwrap().to_vec();
        for _ in 0..10 {
            let k = rng.random_range(0..analytic.len());
            let orig = s.store.value(id).data()[k];
            s.store.value_mut(id).data_mut()[k] = orig + H;
            let up = eval(&s.store);
            s.store.value_mut(id).data_mut()[k] = orig - H;
            let down = eval(&s.store);
            s.store.value_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * H);
            let a = analytic[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    assert!(checked > 0);
    worst
}

pub fn clip_loss_gradient() -> f64 {
    let (b, a) = (6, 4);
    let mut s = setup(5, a, b, 1);
    let mut rng = rng_from_seed(11);
    let actions: Vec<usize> = (0..b).map(|_| rng.random_range(0..a)).collect();
    let adv: Vec<f64> = (0..b).map(|_| rng.random_range(-2.0..2.0)).collect();
    // Old probabilities chosen so ratios sit clearly inside or outside the
    // clip range (the loss has kinks at 1 ± ε).
    let probs = {
        let mut g = Graph::with_params(&s.store);
        let x = g.input(s.x.clone());
        let y = s.net.forward(&mut g, x, Mode::Train, None).unwrap();
        g.data(y).chunks(a).map(super::softmax).collect::<Vec<_>>()
    };
    let factors = [1.0, 0.6, 1.5, 0.95, 1.6, 0.7];
    let pi_old: Vec<f64> = (0..b).map(|i| (probs[i][actions[i]] * factors[i]).min(1.0)).collect();
    check(
        &mut s,
        &|g, logits| {
            let lp = g.log_softmax(logits);
            let lp = g.gather(lp, actions.clone());
            clip_loss(g, lp, &pi_old, &adv, 0.2).0
        },
        &mut rng,
    )
}

pub fn value_loss_gradient() -> f64 {
    let b = 6;
    let mut s = setup(4, 1, b, 2);
    let mut rng = rng_from_seed(12);
    let v_now = {
        let mut g = Graph::with_params(&s.store);
        let x = g.input(s.x.clone());
        let y = s.net.forward(&mut g, x, Mode::Train, None).unwrap();
        g.data(y).to_vec()
    };
    // Mix of clipped and unclipped branches, away from the switch points.
    let shifts = [0.05, -0.5, 0.6, -0.1, 0.9, -0.7];
    let v_old: Vec<f64> = v_now.iter().zip(shifts).map(|(v, d)| v - d).collect();
    let v_targ: Vec<f64> = (0..b).map(|_| rng.random_range(-2.0..2.0)).collect();
    check(
        &mut s,
        &|g, y| {
            let v = g.sum_last(y);
            value_loss(g, v, &v_old, &v_targ, 0.2)
        },
        &mut rng,
    )
}

pub fn entropy_gradient() -> f64 {
    let mut s = setup(3, 5, 4, 3);
    let mut rng = rng_from_seed(13);
    check(&mut s, &|g, logits| entropy_bonus(g, logits), &mut rng)
}

pub fn kl_loss_gradient() -> f64 {
    let (b, a, k) = (5, 3, 7);
    let mut s = setup(4, a * k, b, 4);
    let mut rng = rng_from_seed(14);
    let actions: Vec<usize> = (0..b).map(|_| rng.random_range(0..a)).collect();
    let targets: Vec<f64> = (0..b)
        .flat_map(|_| super::softmax(&(0..k).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<_>>()))
        .collect();
    let weights: Vec<f64> = (0..b).map(|_| rng.random_range(0.2..1.0)).collect();
    check(
        &mut s,
        &|g, y| {
            let r = g.reshape(y, vec![b, a, k]);
            let lp = g.log_softmax(r);
            kl_loss(g, lp, &actions, &targets, &weights).0
        },
        &mut rng,
    )
}

pub fn l2_penalty_gradient() -> f64 {
    let mut s = setup(4, 3, 2, 5);
    let mut rng = rng_from_seed(15);
    // Weight matrices get 2·w·c; biases are outside the penalty.
    check(
        &mut s,
        &|g, y| {
            let base = g.sum(y);
            let p = l2_penalty(g, 0.37);
            let z = g.scale(base, 0.0);
            g.add(z, p)
        },
        &mut rng,
    )
}

pub fn all() -> Vec<(&'static str, f64)> {
    vec![
        ("clip", clip_loss_gradient()),
        ("value", value_loss_gradient()),
        ("entropy", entropy_gradient()),
        ("kl", kl_loss_gradient()),
        ("l2", l2_penalty_gradient()),
    ]
}
