//! Minimal tensor math with reverse-mode differentiation, the layer kinds
//! both agents need, and an Adam optimizer.

pub mod checkpoint;
pub mod graph;
pub mod kernels;
pub mod layers;
pub mod models;
pub mod params;
pub mod tensor;

pub use graph::{Graph, Var};
pub use layers::{apply_stat_updates, forward, LayerSpec, Mode, Sequential};
pub use models::{DistQNet, PolicyValueNet, TrunkConfig};
pub use params::{AdamConfig, Gradients, NetworkParams, ParamId, ParamKind};
pub use tensor::Tensor;

/// Default ℓ₂ weight when the regularizer is enabled.
pub const DEFAULT_L2_WEIGHT: f64 = 1e-4;

/// `weight · Σ‖W‖²` over weight matrices and kernels (biases, batch-norm
/// affine terms and noise scales excluded).
pub fn l2_penalty(g: &mut Graph<'_>, weight: f64) -> Var {
    let store = g.params().expect("l2 penalty needs a parameter store");
    let ids: Vec<ParamId> = store
        .iter()
        .filter(|(_, p)| p.kind == ParamKind::Weight)
        .map(|(id, _)| id)
        .collect();
    if weight == 0.0 || ids.is_empty() {
        return g.input(Tensor::scalar(0.0));
    }
    let mut total: Option<Var> = None;
    for id in ids {
        let v = g.param(id);
        let sq = g.square(v);
        let s = g.sum(sq);
        total = Some(match total {
            Some(t) => g.add(t, s),
            None => s,
        });
    }
    let total = total.expect("non-empty");
    g.scale(total, weight)
}
