//! Layer specifications and sequential stacks built on the autodiff graph.

use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use super::graph::{Graph, StatUpdate, Var};
use super::params::{orthogonal, NetworkParams, ParamId, ParamKind};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerSpec {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Dense {
        in_features: usize,
        out_features: usize,
    },
    NoisyDense {
        in_features: usize,
        out_features: usize,
        sigma0: f64,
    },
    BatchNorm {
        features: usize,
    },
    MaxPool {
        size: usize,
    },
    Relu,
    Flatten,
    Softmax,
}

impl LayerSpec {
    pub fn validate(&self, layer: usize) -> Result<()> {
        let bad = |detail: &str| {
            Err(Error::LayerShape {
                layer,
                detail: detail.to_string(),
            })
        };
        match *self {
            LayerSpec::Conv { kernel, stride, .. } if kernel == 0 || stride == 0 => {
                bad("conv kernel size and stride must be positive")
            }
            LayerSpec::NoisyDense { sigma0, .. } if !(sigma0 > 0.0) => {
                bad("noisy-dense sigma0 must be positive")
            }
            LayerSpec::MaxPool { size: 0 } => bad("pool size must be positive"),
            _ => Ok(()),
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, layer: usize, input: &[usize]) -> Result<Vec<usize>> {
        self.validate(layer)?;
        let err = |detail: String| Error::LayerShape { layer, detail };
        match *self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                if input.len() != 3 || input[0] != in_channels {
                    return Err(err(format!(
                        "conv expects [{in_channels}, H, W], got {input:?}"
                    )));
                }
                if input[1] + 2 * padding < kernel || input[2] + 2 * padding < kernel {
                    return Err(err(format!("input {input:?} smaller than kernel {kernel}")));
                }
                Ok(vec![
                    out_channels,
                    (input[1] + 2 * padding - kernel) / stride + 1,
                    (input[2] + 2 * padding - kernel) / stride + 1,
                ])
            }
            LayerSpec::Dense {
                in_features,
                out_features,
            }
            | LayerSpec::NoisyDense {
                in_features,
                out_features,
                ..
            } => {
                if input != [in_features] {
                    return Err(err(format!(
                        "dense expects [{in_features}], got {input:?}"
                    )));
                }
                Ok(vec![out_features])
            }
            LayerSpec::BatchNorm { features } => {
                if input.is_empty() || input[0] != features {
                    return Err(err(format!(
                        "batch-norm over {features} features, got {input:?}"
                    )));
                }
                Ok(input.to_vec())
            }
            LayerSpec::MaxPool { size } => {
                if input.len() != 3 || input[1] < size || input[2] < size {
                    return Err(err(format!("max-pool {size} on {input:?}")));
                }
                Ok(vec![input[0], input[1] / size, input[2] / size])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Softmax => {
                if input.len() != 1 {
                    return Err(err(format!("softmax expects a vector, got {input:?}")));
                }
                Ok(input.to_vec())
            }
        }
    }

    fn has_weights(&self) -> bool {
        matches!(
            self,
            LayerSpec::Conv { .. } | LayerSpec::Dense { .. } | LayerSpec::NoisyDense { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
enum LayerParams {
    None,
    Affine {
        weight: ParamId,
        bias: ParamId,
    },
    Noisy {
        w_mu: ParamId,
        w_sigma: ParamId,
        b_mu: ParamId,
        b_sigma: ParamId,
    },
    Norm {
        gamma: ParamId,
        beta: ParamId,
        mean: ParamId,
        var: ParamId,
    },
}

/// A validated stack of layers whose parameters live in a [`NetworkParams`].
#[derive(Debug, Clone)]
pub struct Sequential {
    name: String,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    params: Vec<LayerParams>,
}

impl Sequential {
    /// Validate shapes and register freshly initialized parameters.
    /// Weighted layers that feed a ReLU get orthogonal gain √2; the others
    /// get `out_gain`.
    pub fn build(
        name: &str,
        input_shape: &[usize],
        layers: Vec<LayerSpec>,
        out_gain: f64,
        store: &mut NetworkParams,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut shape = input_shape.to_vec();
        for (i, l) in layers.iter().enumerate() {
            shape = l.output_shape(i, &shape)?;
        }
        let output_shape = shape;
        let mut params = Vec::with_capacity(layers.len());
        for (i, l) in layers.iter().enumerate() {
            let feeds_relu = layers[i + 1..]
                .iter()
                .find(|n| !matches!(n, LayerSpec::BatchNorm { .. }))
                .is_some_and(|n| *n == LayerSpec::Relu);
            let gain = if feeds_relu { 2f64.sqrt() } else { out_gain };
            let p = |suffix: &str| format!("{name}.{i}.{suffix}");
            let lp = match *l {
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => {
                    let fan_in = in_channels * kernel * kernel;
                    let w = orthogonal(out_channels, fan_in, gain, rng);
                    LayerParams::Affine {
                        weight: store.add(
                            p("weight"),
                            ParamKind::Weight,
                            Tensor::new(vec![out_channels, in_channels, kernel, kernel], w)?,
                        ),
                        bias: store.add(p("bias"), ParamKind::Bias, Tensor::zeros(&[out_channels])),
                    }
                }
                LayerSpec::Dense {
                    in_features,
                    out_features,
                } => {
                    let w = orthogonal(out_features, in_features, gain, rng);
                    LayerParams::Affine {
                        weight: store.add(
                            p("weight"),
                            ParamKind::Weight,
                            Tensor::new(vec![out_features, in_features], w)?,
                        ),
                        bias: store.add(p("bias"), ParamKind::Bias, Tensor::zeros(&[out_features])),
                    }
                }
                LayerSpec::NoisyDense {
                    in_features,
                    out_features,
                    sigma0,
                } => {
                    // Factorized noisy-net initialization.
                    let bound = 1.0 / (in_features as f64).sqrt();
                    let u = Uniform::new_inclusive(-bound, bound).expect("bound > 0");
                    let mu: Vec<f64> = (0..in_features * out_features).map(|_| u.sample(rng)).collect();
                    let bmu: Vec<f64> = (0..out_features).map(|_| u.sample(rng)).collect();
                    let s = sigma0 * bound;
                    LayerParams::Noisy {
                        w_mu: store.add(
                            p("w_mu"),
                            ParamKind::Weight,
                            Tensor::new(vec![out_features, in_features], mu)?,
                        ),
                        w_sigma: store.add(
                            p("w_sigma"),
                            ParamKind::NoiseScale,
                            Tensor::full(&[out_features, in_features], s),
                        ),
                        b_mu: store.add(p("b_mu"), ParamKind::Bias, Tensor::new(vec![out_features], bmu)?),
                        b_sigma: store.add(
                            p("b_sigma"),
                            ParamKind::NoiseScale,
                            Tensor::full(&[out_features], s),
                        ),
                    }
                }
                LayerSpec::BatchNorm { features } => LayerParams::Norm {
                    gamma: store.add(p("gamma"), ParamKind::NormAffine, Tensor::full(&[features], 1.0)),
                    beta: store.add(p("beta"), ParamKind::NormAffine, Tensor::zeros(&[features])),
                    mean: store.add(p("running_mean"), ParamKind::RunningStat, Tensor::zeros(&[features])),
                    var: store.add(p("running_var"), ParamKind::RunningStat, Tensor::full(&[features], 1.0)),
                },
                _ => LayerParams::None,
            };
            debug_assert_eq!(l.has_weights(), matches!(lp, LayerParams::Affine { .. } | LayerParams::Noisy { .. }));
            params.push(lp);
        }
        Ok(Self {
            name: name.to_string(),
            input_shape: input_shape.to_vec(),
            output_shape,
            layers,
            params,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn has_noise(&self) -> bool {
        self.layers
            .iter()
            .any(|l| matches!(l, LayerSpec::NoisyDense { .. }))
    }

    /// Record the stack's forward pass on `g`. `noise` must be supplied in
    /// train mode when the stack has noisy layers.
    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        x: Var,
        mode: Mode,
        mut noise: Option<&mut Rng>,
    ) -> Result<Var> {
        let s = g.shape(x);
        if s.len() != self.input_shape.len() + 1 || s[1..] != self.input_shape[..] {
            return Err(Error::Shape(format!(
                "{}: input {:?} does not match [B, {:?}]",
                self.name, s, self.input_shape
            )));
        }
        let mut h = x;
        for (i, (layer, lp)) in self.layers.iter().zip(&self.params).enumerate() {
            h = match (layer, lp) {
                (LayerSpec::Conv { stride, padding, .. }, LayerParams::Affine { weight, bias }) => {
                    let w = g.param(*weight);
                    let b = g.param(*bias);
                    g.conv2d(h, w, Some(b), *stride, *padding)
                }
                (LayerSpec::Dense { .. }, LayerParams::Affine { weight, bias }) => {
                    let w = g.param(*weight);
                    let b = g.param(*bias);
                    g.linear(h, w, Some(b))
                }
                (
                    LayerSpec::NoisyDense {
                        in_features,
                        out_features,
                        ..
                    },
                    LayerParams::Noisy {
                        w_mu,
                        w_sigma,
                        b_mu,
                        b_sigma,
                    },
                ) => {
                    let eps = match mode {
                        Mode::Eval => None,
                        Mode::Train => {
                            let rng = noise.as_deref_mut().ok_or_else(|| {
                                Error::Config(format!(
                                    "{}: layer {i} is noisy but no noise stream was given",
                                    self.name
                                ))
                            })?;
                            Some(factorized_noise(*in_features, *out_features, rng))
                        }
                    };
                    let (a, b, c, d) = (g.param(*w_mu), g.param(*w_sigma), g.param(*b_mu), g.param(*b_sigma));
                    g.noisy_linear(h, a, b, c, d, eps)
                }
                (
                    LayerSpec::BatchNorm { .. },
                    LayerParams::Norm {
                        gamma,
                        beta,
                        mean,
                        var,
                    },
                ) => {
                    let (ga, be) = (g.param(*gamma), g.param(*beta));
                    match mode {
                        Mode::Train => {
                            let (v, stats) = g.batch_norm(h, ga, be, None, BN_EPS);
                            let (bm, bv) = stats.expect("train mode yields batch stats");
                            let n = (g.value(h).len() / bm.len()) as f64;
                            // Running variance tracks the unbiased estimate.
                            let corr = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
                            g.push_stat_update(StatUpdate {
                                mean: *mean,
                                var: *var,
                                batch_mean: bm,
                                batch_var: bv.iter().map(|v| v * corr).collect(),
                            });
                            v
                        }
                        Mode::Eval => {
                            let store = g.params().expect("store");
                            let (m, v) = (store.value(*mean).data(), store.value(*var).data());
                            g.batch_norm(h, ga, be, Some((m, v)), BN_EPS).0
                        }
                    }
                }
                (LayerSpec::MaxPool { size }, _) => g.max_pool(h, *size),
                (LayerSpec::Relu, _) => g.relu(h),
                (LayerSpec::Flatten, _) => g.flatten(h),
                (LayerSpec::Softmax, _) => g.softmax(h),
                _ => unreachable!("layer/param mismatch at {i}"),
            };
        }
        Ok(h)
    }
}

/// Factorized Gaussian noise `f(ε) = sgn(ε)·√|ε|` for input and output units.
pub fn factorized_noise(fin: usize, fout: usize, rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
    let mut f = || {
        let e: f64 = StandardNormal.sample(rng);
        e.signum() * e.abs().sqrt()
    };
    let a: Vec<f64> = (0..fin).map(|_| f()).collect();
    let b: Vec<f64> = (0..fout).map(|_| f()).collect();
    (a, b)
}

/// Fold train-mode batch statistics into the running estimates.
pub fn apply_stat_updates(store: &mut NetworkParams, updates: &[StatUpdate]) {
    for u in updates {
        let m: Vec<f64> = store
            .value(u.mean)
            .data()
            .iter()
            .zip(&u.batch_mean)
            .map(|(r, b)| (1.0 - BN_MOMENTUM) * r + BN_MOMENTUM * b)
            .collect();
        let v: Vec<f64> = store
            .value(u.var)
            .data()
            .iter()
            .zip(&u.batch_var)
            .map(|(r, b)| (1.0 - BN_MOMENTUM) * r + BN_MOMENTUM * b)
            .collect();
        store.set_stat(u.mean, &m);
        store.set_stat(u.var, &v);
    }
}

/// Standalone forward pass returning the output tensor.
pub fn forward(
    store: &NetworkParams,
    net: &Sequential,
    input: &Tensor,
    mode: Mode,
    noise: Option<&mut Rng>,
) -> Result<Tensor> {
    let mut g = Graph::with_params(store);
    let x = g.input(input.clone());
    let y = net.forward(&mut g, x, mode, noise)?;
    Ok(g.value(y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn empty_stack_is_identity() {
        let mut store = NetworkParams::new();
        let mut rng = rng_from_seed(0);
        let net = Sequential::build("id", &[3], vec![], 1.0, &mut store, &mut rng).unwrap();
        let x = Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap();
        let y = forward(&store, &net, &x, Mode::Eval, None).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn identity_dense_passes_input_through() {
        let mut store = NetworkParams::new();
        let mut rng = rng_from_seed(0);
        let net = Sequential::build(
            "d",
            &[3],
            vec![LayerSpec::Dense {
                in_features: 3,
                out_features: 3,
            }],
            1.0,
            &mut store,
            &mut rng,
        )
        .unwrap();
        let w = store.id("d.0.weight").unwrap();
        let eye = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        store.value_mut(w).data_mut().copy_from_slice(&eye);
        let v = Tensor::new(vec![1, 3], vec![0.25, -7.0, 3.5]).unwrap();
        let y = forward(&store, &net, &v, Mode::Train, None).unwrap();
        assert_eq!(y.data(), v.data());
    }

    #[test]
    fn one_by_one_ones_conv_sums_channels() {
        let mut store = NetworkParams::new();
        let mut rng = rng_from_seed(0);
        let net = Sequential::build(
            "c",
            &[2, 3, 3],
            vec![LayerSpec::Conv {
                in_channels: 2,
                out_channels: 1,
                kernel: 1,
                stride: 1,
                padding: 0,
            }],
            1.0,
            &mut store,
            &mut rng,
        )
        .unwrap();
        let w = store.id("c.0.weight").unwrap();
        store.value_mut(w).data_mut().copy_from_slice(&[1.0, 1.0]);
        let mut data = vec![3.0; 9];
        data.extend(vec![5.0; 9]);
        let x = Tensor::new(vec![1, 2, 3, 3], data).unwrap();
        let y = forward(&store, &net, &x, Mode::Eval, None).unwrap();
        assert!(y.data().iter().all(|&v| v == 8.0));
    }

    #[test]
    fn mismatched_layers_report_index() {
        let mut store = NetworkParams::new();
        let mut rng = rng_from_seed(0);
        let err = Sequential::build(
            "bad",
            &[4],
            vec![
                LayerSpec::Dense {
                    in_features: 4,
                    out_features: 5,
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    in_features: 6,
                    out_features: 2,
                },
            ],
            1.0,
            &mut store,
            &mut rng,
        )
        .unwrap_err();
        assert!(matches!(err, Error::LayerShape { layer: 2, .. }), "{err}");
    }

    #[test]
    fn invalid_specs_rejected() {
        let conv = LayerSpec::Conv {
            in_channels: 1,
            out_channels: 1,
            kernel: 0,
            stride: 1,
            padding: 0,
        };
        assert!(conv.validate(0).is_err());
        let noisy = LayerSpec::NoisyDense {
            in_features: 1,
            out_features: 1,
            sigma0: 0.0,
        };
        assert!(noisy.validate(0).is_err());
    }
}
