//! Reverse-mode differentiation over a tape of coarse tensor ops.
//!
//! A [`Graph`] records every value produced while evaluating a network and a
//! loss. Parameters enter the tape by reference to a [`NetworkParams`] store;
//! [`Graph::backward`] returns [`Gradients`] that the caller accumulates into
//! the store once the graph (and its borrow) is dropped.

use std::collections::HashMap;

use super::kernels::{self, ConvGeom, Strides};
use super::params::{Gradients, NetworkParams, ParamId};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

struct NoisyCache {
    eps_in: Vec<f64>,
    eps_out: Vec<f64>,
    w_eff: Vec<f64>,
}

struct BnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    channels: usize,
    spatial: usize,
    batch_stats: bool,
}

enum Op {
    Leaf,
    Param(ParamId),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    NoisyLinear {
        x: Var,
        w_mu: Var,
        w_sigma: Var,
        b_mu: Var,
        b_sigma: Var,
        cache: NoisyCache,
    },
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    MaxPool {
        x: Var,
        arg: Vec<u32>,
    },
    Relu(Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        cache: BnCache,
    },
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Clamp {
        x: Var,
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    Minimum(Var, Var),
    Maximum(Var, Var),
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Gather {
        x: Var,
        idx: Vec<usize>,
    },
    Dueling {
        v: Var,
        adv: Var,
        actions: usize,
    },
}

struct Node {
    value: Value,
    op: Op,
    needs_grad: bool,
}

/// Running-statistics update requested by a train-mode batch-norm forward.
#[derive(Debug, Clone)]
pub struct StatUpdate {
    pub mean: ParamId,
    pub var: ParamId,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

pub struct Graph<'p> {
    params: Option<&'p NetworkParams>,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
    stat_updates: Vec<StatUpdate>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Graph<'p> {
    /// A graph without a parameter store (pure tensor computations).
    pub fn new() -> Self {
        Self {
            params: None,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            stat_updates: Vec::new(),
        }
    }

    pub fn with_params(params: &'p NetworkParams) -> Self {
        Self {
            params: Some(params),
            ..Self::new()
        }
    }

    pub fn params(&self) -> Option<&'p NetworkParams> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self
                .params
                .expect("param node without store")
                .value(*id),
        }
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.value(v).data()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn take_stat_updates(&mut self) -> Vec<StatUpdate> {
        std::mem::take(&mut self.stat_updates)
    }

    pub(crate) fn push_stat_update(&mut self, u: StatUpdate) {
        self.stat_updates.push(u);
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; never receives gradient.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn constant_vec(&mut self, data: Vec<f64>) -> Var {
        self.input(Tensor::from_vec(data))
    }

    /// Bring a stored parameter onto the tape (memoized per graph).
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(&id) {
            return *v;
        }
        let store = self.params.expect("graph has no parameter store");
        let trainable = store.param(id).kind.trainable();
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
            needs_grad: trainable,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "{what}: operand shapes differ"
        );
    }

    // ---- layers -------------------------------------------------------

    /// `x[B, in] · wᵀ + b`, with `w` stored as `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (batch, fin) = as_matrix(self.shape(x));
        let ws = self.shape(w);
        assert_eq!(ws.len(), 2, "linear weight must be a matrix");
        let fout = ws[0];
        assert_eq!(ws[1], fin, "linear: input features {fin} vs weight {ws:?}");
        let mut out = vec![0.0; batch * fout];
        kernels::gemm(
            batch,
            fin,
            fout,
            self.data(x),
            Strides(fin, 1),
            self.data(w),
            Strides(1, fin),
            &mut out,
            false,
        );
        if let Some(b) = b {
            add_row_bias(&mut out, self.data(b));
        }
        let needs = self.ng(&[x, w]) || b.is_some_and(|b| self.ng(&[b]));
        self.push(
            Tensor::new(vec![batch, fout], out).expect("linear shape"),
            Op::Linear { x, w, b },
            needs,
        )
    }

    /// Linear layer with factorized Gaussian weight noise. Passing `None`
    /// for the noise uses the mean weights only.
    pub fn noisy_linear(
        &mut self,
        x: Var,
        w_mu: Var,
        w_sigma: Var,
        b_mu: Var,
        b_sigma: Var,
        noise: Option<(Vec<f64>, Vec<f64>)>,
    ) -> Var {
        let (batch, fin) = as_matrix(self.shape(x));
        let fout = self.shape(w_mu)[0];
        assert_eq!(self.shape(w_mu), &[fout, fin]);
        let (eps_in, eps_out) = noise.unwrap_or_else(|| (vec![0.0; fin], vec![0.0; fout]));
        assert_eq!(eps_in.len(), fin);
        assert_eq!(eps_out.len(), fout);
        let mu = self.data(w_mu);
        let sigma = self.data(w_sigma);
        let mut w_eff = mu.to_vec();
        for o in 0..fout {
            let eo = eps_out[o];
            if eo == 0.0 {
                continue;
            }
            for i in 0..fin {
                w_eff[o * fin + i] += sigma[o * fin + i] * eo * eps_in[i];
            }
        }
        let b_eff: Vec<f64> = self
            .data(b_mu)
            .iter()
            .zip(self.data(b_sigma))
            .zip(&eps_out)
            .map(|((m, s), e)| m + s * e)
            .collect();
        let mut out = vec![0.0; batch * fout];
        kernels::gemm(
            batch,
            fin,
            fout,
            self.data(x),
            Strides(fin, 1),
            &w_eff,
            Strides(1, fin),
            &mut out,
            false,
        );
        add_row_bias(&mut out, &b_eff);
        let needs = self.ng(&[x, w_mu, w_sigma, b_mu, b_sigma]);
        self.push(
            Tensor::new(vec![batch, fout], out).expect("noisy shape"),
            Op::NoisyLinear {
                x,
                w_mu,
                w_sigma,
                b_mu,
                b_sigma,
                cache: NoisyCache {
                    eps_in,
                    eps_out,
                    w_eff,
                },
            },
            needs,
        )
    }

    /// 2-d convolution; `x` is `[B, C, H, W]`, `w` is `[O, C, k, k]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert_eq!(xs.len(), 4, "conv input must be NCHW");
        assert_eq!(ws.len(), 4, "conv kernel must be OCkk");
        assert_eq!(xs[1], ws[1], "conv channel mismatch");
        let geom = ConvGeom {
            in_channels: xs[1],
            out_channels: ws[0],
            kernel: ws[2],
            stride,
            padding,
            height: xs[2],
            width: xs[3],
        };
        let bias = b.map(|b| self.data(b).to_vec());
        let out = kernels::conv2d_forward(&geom, xs[0], self.data(x), self.data(w), bias.as_deref());
        let needs = self.ng(&[x, w]) || b.is_some_and(|b| self.ng(&[b]));
        self.push(
            Tensor::new(
                vec![xs[0], geom.out_channels, geom.out_height(), geom.out_width()],
                out,
            )
            .expect("conv shape"),
            Op::Conv { x, w, b, geom },
            needs,
        )
    }

    pub fn max_pool(&mut self, x: Var, size: usize) -> Var {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 4, "max pool input must be NCHW");
        let (out, arg) = kernels::maxpool_forward(self.data(x), s[0] * s[1], s[2], s[3], size);
        let needs = self.ng(&[x]);
        self.push(
            Tensor::new(vec![s[0], s[1], s[2] / size, s[3] / size], out).expect("pool shape"),
            Op::MaxPool { x, arg },
            needs,
        )
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out: Vec<f64> = self.data(x).iter().map(|&v| v.max(0.0)).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.ng(&[x]);
        self.push(Tensor::new(shape, out).expect("relu"), Op::Relu(x), needs)
    }

    /// Batch normalization over axis 1. With `stats = None` batch statistics
    /// are used (train mode); otherwise the supplied running mean/variance.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: Option<(&[f64], &[f64])>,
        eps: f64,
    ) -> (Var, Option<(Vec<f64>, Vec<f64>)>) {
        let s = self.shape(x).to_vec();
        assert!(s.len() >= 2, "batch norm needs a batch axis");
        let (batch, channels) = (s[0], s[1]);
        let spatial: usize = s[2..].iter().product();
        let n = (batch * spatial) as f64;
        let xd = self.data(x);
        let (mean, var, batch_stats) = match stats {
            Some((m, v)) => (m.to_vec(), v.to_vec(), false),
            None => {
                let mut mean = vec![0.0; channels];
                let mut var = vec![0.0; channels];
                for b in 0..batch {
                    for c in 0..channels {
                        let base = (b * channels + c) * spatial;
                        mean[c] += xd[base..base + spatial].iter().sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n);
                for b in 0..batch {
                    for c in 0..channels {
                        let base = (b * channels + c) * spatial;
                        var[c] += xd[base..base + spatial]
                            .iter()
                            .map(|v| (v - mean[c]) * (v - mean[c]))
                            .sum::<f64>();
                    }
                }
                var.iter_mut().for_each(|v| *v /= n);
                (mean, var, true)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let g = self.data(gamma);
        let be = self.data(beta);
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for b in 0..batch {
            for c in 0..channels {
                let base = (b * channels + c) * spatial;
                for i in base..base + spatial {
                    xhat[i] = (xd[i] - mean[c]) * inv_std[c];
                    out[i] = g[c] * xhat[i] + be[c];
                }
            }
        }
        let needs = self.ng(&[x, gamma, beta]);
        let v = self.push(
            Tensor::new(s, out).expect("bn shape"),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                cache: BnCache {
                    xhat,
                    inv_std,
                    channels,
                    spatial,
                    batch_stats,
                },
            },
            needs,
        );
        (v, batch_stats.then_some((mean, var)))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Var {
        let t = self.value(x).clone();
        let t = Tensor::new(shape, t.into_data()).expect("reshape size");
        let needs = self.ng(&[x]);
        self.push(t, Op::Reshape(x), needs)
    }

    /// Collapse all trailing axes: `[B, ...] -> [B, prod(...)]`.
    pub fn flatten(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let b = s[0];
        let rest = s[1..].iter().product();
        self.reshape(x, vec![b, rest])
    }

    // ---- elementwise --------------------------------------------------

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out: Vec<f64> = self.data(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.ng(&[x]);
        self.push(Tensor::new(shape, out).expect("unary"), op, needs)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op, what: &str) -> Var {
        self.same_shape(a, b, what);
        let out: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let needs = self.ng(&[a, b]);
        self.push(Tensor::new(shape, out).expect("binary"), op, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b), "mul")
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x / y, Op::Div(a, b), "div")
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, f64::min, Op::Minimum(a, b), "minimum")
    }

    pub fn maximum(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, f64::max, Op::Maximum(a, b), "maximum")
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Log(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    /// Elementwise clamp into `[lo_i, hi_i]`; gradient passes where
    /// `lo_i <= x_i <= hi_i`.
    pub fn clamp(&mut self, x: Var, lo: Vec<f64>, hi: Vec<f64>) -> Var {
        let n = self.value(x).len();
        assert_eq!(lo.len(), n);
        assert_eq!(hi.len(), n);
        let out: Vec<f64> = self
            .data(x)
            .iter()
            .zip(lo.iter().zip(&hi))
            .map(|(&v, (&l, &h))| v.max(l).min(h))
            .collect();
        let shape = self.shape(x).to_vec();
        let needs = self.ng(&[x]);
        self.push(
            Tensor::new(shape, out).expect("clamp"),
            Op::Clamp { x, lo, hi },
            needs,
        )
    }

    pub fn clamp_scalar(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let n = self.value(x).len();
        self.clamp(x, vec![lo; n], vec![hi; n])
    }

    // ---- reductions -----------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.data(x).iter().sum();
        let needs = self.ng(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), needs)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let d = self.data(x);
        let s = d.iter().sum::<f64>() / d.len() as f64;
        let needs = self.ng(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), needs)
    }

    /// Sum over the last axis.
    pub fn sum_last(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        let k = *s.last().expect("sum_last on 0-d tensor");
        let out: Vec<f64> = self.data(x).chunks(k).map(|c| c.iter().sum()).collect();
        let shape = if s.len() > 1 {
            s[..s.len() - 1].to_vec()
        } else {
            vec![]
        };
        let needs = self.ng(&[x]);
        let t = if shape.is_empty() {
            Tensor::scalar(out[0])
        } else {
            Tensor::new(shape, out).expect("sum_last")
        };
        self.push(t, Op::SumLast(x), needs)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        let k = *s.last().expect("softmax on 0-d tensor");
        let mut out = self.data(x).to_vec();
        out.chunks_mut(k).for_each(softmax_in_place);
        let needs = self.ng(&[x]);
        self.push(Tensor::new(s, out).expect("softmax"), Op::Softmax(x), needs)
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        let k = *s.last().expect("log_softmax on 0-d tensor");
        let mut out = self.data(x).to_vec();
        out.chunks_mut(k).for_each(log_softmax_in_place);
        let needs = self.ng(&[x]);
        self.push(
            Tensor::new(s, out).expect("log_softmax"),
            Op::LogSoftmax(x),
            needs,
        )
    }

    /// Select along axis 1: `x[b, idx[b], ...]`, dropping that axis.
    pub fn gather(&mut self, x: Var, idx: Vec<usize>) -> Var {
        let s = self.shape(x).to_vec();
        assert!(s.len() >= 2, "gather needs [B, A, ...]");
        assert_eq!(idx.len(), s[0], "gather index count");
        let (a, inner): (usize, usize) = (s[1], s[2..].iter().product());
        let d = self.data(x);
        let mut out = Vec::with_capacity(s[0] * inner);
        for (b, &i) in idx.iter().enumerate() {
            assert!(i < a, "gather index {i} out of range {a}");
            let base = (b * a + i) * inner;
            out.extend_from_slice(&d[base..base + inner]);
        }
        let mut shape = vec![s[0]];
        shape.extend_from_slice(&s[2..]);
        let needs = self.ng(&[x]);
        self.push(
            Tensor::new(shape, out).expect("gather"),
            Op::Gather { x, idx },
            needs,
        )
    }

    /// Dueling combination over atoms: `v [B, K]`, `adv [B, A·K]` →
    /// logits `[B, A, K]` with `v + adv − mean_a adv`.
    pub fn dueling(&mut self, v: Var, adv: Var, actions: usize) -> Var {
        let vs = self.shape(v).to_vec();
        let (batch, atoms) = (vs[0], vs[1]);
        assert_eq!(self.shape(adv), &[batch, actions * atoms]);
        let vd = self.data(v);
        let ad = self.data(adv);
        let mut out = vec![0.0; batch * actions * atoms];
        for b in 0..batch {
            for k in 0..atoms {
                let mean: f64 = (0..actions)
                    .map(|a| ad[(b * actions + a) * atoms + k])
                    .sum::<f64>()
                    / actions as f64;
                for a in 0..actions {
                    let i = (b * actions + a) * atoms + k;
                    out[i] = vd[b * atoms + k] + ad[i] - mean;
                }
            }
        }
        let needs = self.ng(&[v, adv]);
        self.push(
            Tensor::new(vec![batch, actions, atoms], out).expect("dueling"),
            Op::Dueling { v, adv, actions },
            needs,
        )
    }

    // ---- backward -------------------------------------------------------

    /// Reverse pass from a scalar `loss`. Returns the gradient of every
    /// trainable parameter reached.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.nodes[loss.0].needs_grad {
            return Err(Error::Disconnected);
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::default();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads, &mut out);
        }
        if out.is_empty() {
            return Err(Error::Disconnected);
        }
        out.entries.sort_by_key(|(id, _)| *id);
        Ok(out)
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let n = self.value(v).len();
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
        f(slot);
    }

    fn propagate(
        &self,
        i: usize,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        out: &mut Gradients,
    ) {
        let y = self.nodes[i].value_data(self);
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Param(id) => out.entries.push((*id, g.to_vec())),
            Op::Linear { x, w, b } => {
                let (batch, fin) = as_matrix(self.shape(*x));
                let fout = g.len() / batch;
                self.acc(grads, *x, |dx| {
                    kernels::gemm(
                        batch,
                        fout,
                        fin,
                        g,
                        Strides(fout, 1),
                        self.data(*w),
                        Strides(fin, 1),
                        dx,
                        true,
                    )
                });
                self.acc(grads, *w, |dw| {
                    kernels::gemm(
                        fout,
                        batch,
                        fin,
                        g,
                        Strides(1, fout),
                        self.data(*x),
                        Strides(fin, 1),
                        dw,
                        true,
                    )
                });
                if let Some(b) = b {
                    self.acc(grads, *b, |db| sum_rows_into(g, fout, db));
                }
            }
            Op::NoisyLinear {
                x,
                w_mu,
                w_sigma,
                b_mu,
                b_sigma,
                cache,
            } => {
                let (batch, fin) = as_matrix(self.shape(*x));
                let fout = cache.eps_out.len();
                self.acc(grads, *x, |dx| {
                    kernels::gemm(
                        batch,
                        fout,
                        fin,
                        g,
                        Strides(fout, 1),
                        &cache.w_eff,
                        Strides(fin, 1),
                        dx,
                        true,
                    )
                });
                let needs_w = self.nodes[w_mu.0].needs_grad || self.nodes[w_sigma.0].needs_grad;
                if needs_w {
                    let mut dw = vec![0.0; fout * fin];
                    kernels::gemm(
                        fout,
                        batch,
                        fin,
                        g,
                        Strides(1, fout),
                        self.data(*x),
                        Strides(fin, 1),
                        &mut dw,
                        false,
                    );
                    self.acc(grads, *w_mu, |d| add_into(d, &dw));
                    self.acc(grads, *w_sigma, |d| {
                        for o in 0..fout {
                            let eo = cache.eps_out[o];
                            for k in 0..fin {
                                d[o * fin + k] += dw[o * fin + k] * eo * cache.eps_in[k];
                            }
                        }
                    });
                }
                let mut db = vec![0.0; fout];
                sum_rows_into(g, fout, &mut db);
                self.acc(grads, *b_mu, |d| add_into(d, &db));
                self.acc(grads, *b_sigma, |d| {
                    for o in 0..fout {
                        d[o] += db[o] * cache.eps_out[o];
                    }
                });
            }
            Op::Conv { x, w, b, geom } => {
                let batch = self.shape(*x)[0];
                let want_dx = self.nodes[x.0].needs_grad;
                let mut dw_buf = self.nodes[w.0]
                    .needs_grad
                    .then(|| vec![0.0; self.value(*w).len()]);
                let mut db_buf = b
                    .filter(|b| self.nodes[b.0].needs_grad)
                    .map(|b| vec![0.0; self.value(b).len()]);
                let dx = kernels::conv2d_backward(
                    geom,
                    batch,
                    self.data(*x),
                    self.data(*w),
                    g,
                    dw_buf.as_deref_mut(),
                    db_buf.as_deref_mut(),
                    want_dx,
                );
                if let Some(dx) = dx {
                    self.acc(grads, *x, |d| add_into(d, &dx));
                }
                if let Some(dw) = dw_buf {
                    self.acc(grads, *w, |d| add_into(d, &dw));
                }
                if let (Some(b), Some(db)) = (b, db_buf) {
                    self.acc(grads, *b, |d| add_into(d, &db));
                }
            }
            Op::MaxPool { x, arg } => self.acc(grads, *x, |dx| {
                for (o, &src) in arg.iter().enumerate() {
                    dx[src as usize] += g[o];
                }
            }),
            Op::Relu(x) => self.acc(grads, *x, |dx| {
                for ((d, &gi), &yi) in dx.iter_mut().zip(g).zip(y) {
                    if yi > 0.0 {
                        *d += gi;
                    }
                }
            }),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                cache,
            } => {
                let (c_n, sp) = (cache.channels, cache.spatial);
                let batch = g.len() / (c_n * sp);
                let n = (batch * sp) as f64;
                let mut dgamma = vec![0.0; c_n];
                let mut dbeta = vec![0.0; c_n];
                for b in 0..batch {
                    for c in 0..c_n {
                        let base = (b * c_n + c) * sp;
                        for k in base..base + sp {
                            dgamma[c] += g[k] * cache.xhat[k];
                            dbeta[c] += g[k];
                        }
                    }
                }
                let gam = self.data(*gamma);
                self.acc(grads, *x, |dx| {
                    for b in 0..batch {
                        for c in 0..c_n {
                            let base = (b * c_n + c) * sp;
                            let s = gam[c] * cache.inv_std[c];
                            for k in base..base + sp {
                                dx[k] += if cache.batch_stats {
                                    s / n * (n * g[k] - dbeta[c] - cache.xhat[k] * dgamma[c])
                                } else {
                                    s * g[k]
                                };
                            }
                        }
                    }
                });
                self.acc(grads, *gamma, |d| add_into(d, &dgamma));
                self.acc(grads, *beta, |d| add_into(d, &dbeta));
            }
            Op::Reshape(x) => self.acc(grads, *x, |dx| add_into(dx, g)),
            Op::Add(a, b) => {
                self.acc(grads, *a, |d| add_into(d, g));
                self.acc(grads, *b, |d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |d| add_into(d, g));
                self.acc(grads, *b, |d| {
                    d.iter_mut().zip(g).for_each(|(d, gi)| *d -= gi)
                });
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                self.acc(grads, *a, |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * bd[k];
                    }
                });
                self.acc(grads, *b, |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * ad[k];
                    }
                });
            }
            Op::Div(a, b) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                self.acc(grads, *a, |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] / bd[k];
                    }
                });
                self.acc(grads, *b, |d| {
                    for k in 0..d.len() {
                        d[k] -= g[k] * ad[k] / (bd[k] * bd[k]);
                    }
                });
            }
            Op::Scale(x, c) => self.acc(grads, *x, |d| {
                d.iter_mut().zip(g).for_each(|(d, gi)| *d += c * gi)
            }),
            Op::AddScalar(x) => self.acc(grads, *x, |d| add_into(d, g)),
            Op::Exp(x) => self.acc(grads, *x, |d| {
                for k in 0..d.len() {
                    d[k] += g[k] * y[k];
                }
            }),
            Op::Log(x) => {
                let xd = self.data(*x);
                self.acc(grads, *x, |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] / xd[k];
                    }
                })
            }
            Op::Square(x) => {
                let xd = self.data(*x);
                self.acc(grads, *x, |d| {
                    for k in 0..d.len() {
                        d[k] += 2.0 * xd[k] * g[k];
                    }
                })
            }
            Op::Clamp { x, lo, hi } => {
                let xd = self.data(*x);
                self.acc(grads, *x, |d| {
                    for k in 0..d.len() {
                        if xd[k] >= lo[k] && xd[k] <= hi[k] {
                            d[k] += g[k];
                        }
                    }
                })
            }
            Op::Minimum(a, b) | Op::Maximum(a, b) => {
                let is_min = matches!(self.nodes[i].op, Op::Minimum(..));
                let (ad, bd) = (self.data(*a), self.data(*b));
                // Ties route the gradient to the first operand.
                let pick_a = |k: usize| if is_min { ad[k] <= bd[k] } else { ad[k] >= bd[k] };
                self.acc(grads, *a, |d| {
                    for k in 0..d.len() {
                        if pick_a(k) {
                            d[k] += g[k];
                        }
                    }
                });
                self.acc(grads, *b, |d| {
                    for k in 0..d.len() {
                        if !pick_a(k) {
                            d[k] += g[k];
                        }
                    }
                });
            }
            Op::Sum(x) => self.acc(grads, *x, |d| d.iter_mut().for_each(|v| *v += g[0])),
            Op::Mean(x) => {
                let n = self.value(*x).len() as f64;
                self.acc(grads, *x, |d| d.iter_mut().for_each(|v| *v += g[0] / n))
            }
            Op::SumLast(x) => {
                let k = *self.shape(*x).last().unwrap();
                self.acc(grads, *x, |d| {
                    for (r, row) in d.chunks_mut(k).enumerate() {
                        row.iter_mut().for_each(|v| *v += g[r]);
                    }
                })
            }
            Op::Softmax(x) => {
                let k = *self.shape(*x).last().unwrap();
                self.acc(grads, *x, |d| {
                    for ((drow, grow), yrow) in d.chunks_mut(k).zip(g.chunks(k)).zip(y.chunks(k)) {
                        let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for j in 0..k {
                            drow[j] += yrow[j] * (grow[j] - dot);
                        }
                    }
                })
            }
            Op::LogSoftmax(x) => {
                let k = *self.shape(*x).last().unwrap();
                self.acc(grads, *x, |d| {
                    for ((drow, grow), yrow) in d.chunks_mut(k).zip(g.chunks(k)).zip(y.chunks(k)) {
                        let gs: f64 = grow.iter().sum();
                        for j in 0..k {
                            drow[j] += grow[j] - yrow[j].exp() * gs;
                        }
                    }
                })
            }
            Op::Gather { x, idx } => {
                let s = self.shape(*x);
                let (a, inner): (usize, usize) = (s[1], s[2..].iter().product());
                self.acc(grads, *x, |d| {
                    for (b, &j) in idx.iter().enumerate() {
                        let base = (b * a + j) * inner;
                        for t in 0..inner {
                            d[base + t] += g[b * inner + t];
                        }
                    }
                })
            }
            Op::Dueling { v, adv, actions } => {
                let atoms = self.shape(*v)[1];
                let batch = self.shape(*v)[0];
                let actions = *actions;
                let mut colsum = vec![0.0; batch * atoms];
                for b in 0..batch {
                    for a in 0..actions {
                        for k in 0..atoms {
                            colsum[b * atoms + k] += g[(b * actions + a) * atoms + k];
                        }
                    }
                }
                self.acc(grads, *v, |d| add_into(d, &colsum));
                self.acc(grads, *adv, |d| {
                    for b in 0..batch {
                        for a in 0..actions {
                            for k in 0..atoms {
                                let i = (b * actions + a) * atoms + k;
                                d[i] += g[i] - colsum[b * atoms + k] / actions as f64;
                            }
                        }
                    }
                })
            }
        }
    }
}

impl Node {
    fn value_data<'a>(&'a self, g: &'a Graph<'_>) -> &'a [f64] {
        match &self.value {
            Value::Owned(t) => t.data(),
            Value::Param(id) => g.params.expect("param store").value(*id).data(),
        }
    }
}

fn as_matrix(shape: &[usize]) -> (usize, usize) {
    assert_eq!(shape.len(), 2, "expected a [batch, features] matrix, got {shape:?}");
    (shape[0], shape[1])
}

fn add_row_bias(out: &mut [f64], bias: &[f64]) {
    for row in out.chunks_mut(bias.len()) {
        for (o, b) in row.iter_mut().zip(bias) {
            *o += b;
        }
    }
}

fn sum_rows_into(g: &[f64], width: usize, dst: &mut [f64]) {
    for row in g.chunks(width) {
        for (d, v) in dst.iter_mut().zip(row) {
            *d += v;
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

pub fn log_softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter_mut().for_each(|v| *v -= lse);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::ParamKind;

    fn store(values: &[(&str, Vec<usize>, Vec<f64>)]) -> NetworkParams {
        let mut p = NetworkParams::new();
        for (name, shape, data) in values {
            p.add(
                *name,
                ParamKind::Weight,
                Tensor::new(shape.clone(), data.clone()).unwrap(),
            );
        }
        p
    }

    #[test]
    fn linear_sum_gradient_is_input() {
        // loss = sum(w ⊙ x)
        let p = store(&[("w", vec![3], vec![0.1, -0.4, 2.0])]);
        let mut g = Graph::with_params(&p);
        let w = g.param(ParamId(0));
        let x = g.constant_vec(vec![1.0, 2.0, 3.0]);
        let prod = g.mul(w, x);
        let loss = g.sum(prod);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(ParamId(0)).unwrap(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn scalar_regression_derivative() {
        // loss = mean((w·x − y)²), w=2, x=3, y=5 → dL/dw = 2·(6−5)·3 = 6
        let p = store(&[("w", vec![1, 1], vec![2.0])]);
        let mut g = Graph::with_params(&p);
        let w = g.param(ParamId(0));
        let x = g.input(Tensor::new(vec![1, 1], vec![3.0]).unwrap());
        let pred = g.linear(x, w, None);
        let y = g.input(Tensor::new(vec![1, 1], vec![5.0]).unwrap());
        let diff = g.sub(pred, y);
        let sq = g.square(diff);
        let loss = g.mean(sq);
        let grads = g.backward(loss).unwrap();
        assert!((grads.get(ParamId(0)).unwrap()[0] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn disconnected_loss_is_an_error() {
        let p = store(&[("w", vec![1], vec![1.0])]);
        let mut g = Graph::with_params(&p);
        let x = g.constant_vec(vec![1.0, 2.0]);
        let loss = g.sum(x);
        assert!(matches!(g.backward(loss), Err(Error::Disconnected)));
    }

    #[test]
    fn backward_requires_scalar() {
        let p = store(&[("w", vec![2], vec![1.0, 1.0])]);
        let mut g = Graph::with_params(&p);
        let w = g.param(ParamId(0));
        let sq = g.square(w);
        assert!(matches!(g.backward(sq), Err(Error::Shape(_))));
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut p = store(&[("w", vec![2], vec![1.0, -1.0])]);
        let grads = {
            let mut g = Graph::with_params(&p);
            let w = g.param(ParamId(0));
            let sq = g.square(w);
            let loss = g.sum(sq);
            g.backward(loss).unwrap()
        };
        p.accumulate(&grads);
        p.accumulate(&grads);
        assert_eq!(p.grad(ParamId(0)).unwrap(), &[4.0, -4.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, -500.0, 0.0, 700.0]).unwrap());
        let s = g.softmax(x);
        for row in g.data(s).chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }
}
