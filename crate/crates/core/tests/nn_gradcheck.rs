//! Central finite-difference checks of every layer kind's backward pass.

use mixreg::nn::{
    forward, Graph, LayerSpec, Mode, NetworkParams, ParamKind, Sequential, Tensor,
};
use mixreg::rng::{rng_from_seed, Rng};
use rand::Rng as _;

const H: f64 = 1e-4;
const REL_TOL: f64 = 1e-3;

fn random_tensor(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).unwrap()
}

/// loss = Σ out ⊙ r for a fixed random projection r.
fn loss_of(
    store: &NetworkParams,
    net: &Sequential,
    x: &Tensor,
    proj: &[f64],
    mode: Mode,
    noise_seed: u64,
) -> f64 {
    let mut noise = rng_from_seed(noise_seed);
    let y = forward(store, net, x, mode, Some(&mut noise)).unwrap();
    y.data().iter().zip(proj).map(|(a, b)| a * b).sum()
}

fn check_stack(input_shape: &[usize], batch: usize, layers: Vec<LayerSpec>, mode: Mode, seed: u64) {
    let mut rng = rng_from_seed(seed);
    let mut store = NetworkParams::new();
    let net = Sequential::build("net", input_shape, layers, 1.0, &mut store, &mut rng).unwrap();
    // Perturb biases and affine terms away from their zero/one init.
    let ids: Vec<_> = store.iter().map(|(id, p)| (id, p.kind)).collect();
    for (id, kind) in &ids {
        if matches!(kind, ParamKind::Bias | ParamKind::NormAffine) {
            for v in store.value_mut(*id).data_mut() {
                *v += rng.random::<f64>() * 0.5 - 0.25;
            }
        }
    }
    let mut shape = vec![batch];
    shape.extend_from_slice(input_shape);
    let x = random_tensor(&shape, &mut rng);
    let out_len = batch * net.output_shape().iter().product::<usize>();
    let proj: Vec<f64> = (0..out_len).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let noise_seed = 99;

    let grads = {
        let mut g = Graph::with_params(&store);
        let xv = g.input(x.clone());
        let mut noise = rng_from_seed(noise_seed);
        let y = net.forward(&mut g, xv, mode, Some(&mut noise)).unwrap();
        let p = g.input(Tensor::new(g.shape(y).to_vec(), proj.clone()).unwrap());
        let prod = g.mul(y, p);
        let loss = g.sum(prod);
        g.backward(loss).unwrap()
    };

    let mut checked = 0;
    for (id, kind) in ids {
        if !kind.trainable() {
            continue;
        }
        let analytic = grads.get(id).expect("every trainable param gets a gradient").to_vec();
        let n = analytic.len();
        // Up to 12 coordinates per parameter.
        let coords: Vec<usize> = if n <= 12 {
            (0..n).collect()
        } else {
            (0..12).map(|_| rng.random_range(0..n)).collect()
        };
        for k in coords {
            let orig = store.value(id).data()[k];
            store.value_mut(id).data_mut()[k] = orig + H;
            let up = loss_of(&store, &net, &x, &proj, mode, noise_seed);
            store.value_mut(id).data_mut()[k] = orig - H;
            let down = loss_of(&store, &net, &x, &proj, mode, noise_seed);
            store.value_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * H);
            let a = analytic[k];
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            let rel = (a - numeric).abs() / denom;
            assert!(
                rel < REL_TOL,
                "{}[{k}]: analytic {a} vs numeric {numeric} (rel {rel})",
                store.param(id).name
            );
            checked += 1;
        }
    }
    assert!(checked > 0);
}

#[test]
fn dense_relu_dense() {
    check_stack(
        &[5],
        4,
        vec![
            LayerSpec::Dense { in_features: 5, out_features: 7 },
            LayerSpec::Relu,
            LayerSpec::Dense { in_features: 7, out_features: 3 },
        ],
        Mode::Train,
        1,
    );
}

#[test]
fn conv_pool_flatten_dense() {
    check_stack(
        &[2, 6, 6],
        3,
        vec![
            LayerSpec::Conv { in_channels: 2, out_channels: 3, kernel: 3, stride: 1, padding: 1 },
            LayerSpec::Relu,
            LayerSpec::MaxPool { size: 2 },
            LayerSpec::Conv { in_channels: 3, out_channels: 2, kernel: 3, stride: 2, padding: 1 },
            LayerSpec::Flatten,
            LayerSpec::Dense { in_features: 8, out_features: 2 },
        ],
        Mode::Train,
        2,
    );
}

#[test]
fn batch_norm_train_mode_conv_and_dense() {
    check_stack(
        &[2, 4, 4],
        5,
        vec![
            LayerSpec::Conv { in_channels: 2, out_channels: 3, kernel: 3, stride: 1, padding: 1 },
            LayerSpec::BatchNorm { features: 3 },
            LayerSpec::Relu,
            LayerSpec::Flatten,
            LayerSpec::Dense { in_features: 48, out_features: 4 },
            LayerSpec::BatchNorm { features: 4 },
        ],
        Mode::Train,
        3,
    );
}

#[test]
fn batch_norm_eval_mode() {
    check_stack(
        &[3],
        4,
        vec![
            LayerSpec::Dense { in_features: 3, out_features: 4 },
            LayerSpec::BatchNorm { features: 4 },
        ],
        Mode::Eval,
        4,
    );
}

#[test]
fn noisy_dense_with_fixed_noise() {
    check_stack(
        &[6],
        3,
        vec![
            LayerSpec::NoisyDense { in_features: 6, out_features: 5, sigma0: 0.5 },
            LayerSpec::Relu,
            LayerSpec::NoisyDense { in_features: 5, out_features: 2, sigma0: 0.5 },
        ],
        Mode::Train,
        5,
    );
}

#[test]
fn softmax_head() {
    check_stack(
        &[4],
        3,
        vec![
            LayerSpec::Dense { in_features: 4, out_features: 3 },
            LayerSpec::Softmax,
        ],
        Mode::Train,
        6,
    );
}

#[test]
fn eval_forward_is_deterministic_and_noise_free() {
    let mut rng = rng_from_seed(8);
    let mut store = NetworkParams::new();
    let net = Sequential::build(
        "n",
        &[4],
        vec![
            LayerSpec::NoisyDense { in_features: 4, out_features: 3, sigma0: 0.5 },
            LayerSpec::BatchNorm { features: 3 },
        ],
        1.0,
        &mut store,
        &mut rng,
    )
    .unwrap();
    let x = random_tensor(&[2, 4], &mut rng);
    let a = forward(&store, &net, &x, Mode::Eval, None).unwrap();
    let mut other = rng_from_seed(1234);
    let b = forward(&store, &net, &x, Mode::Eval, Some(&mut other)).unwrap();
    assert_eq!(a, b);
    // Train mode with noise differs from eval mode.
    let c = forward(&store, &net, &x, Mode::Train, Some(&mut other)).unwrap();
    assert_ne!(a, c);
}
