//! Small parameterized building blocks shared by the model builders.

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::numerics::{Array, Graph, NodeId, ParamStore};

/// Registers an MLP as `{prefix}.{i}.w` / `{prefix}.{i}.b` for each layer.
/// `dims` lists the full chain [in, hidden.., out].
pub fn register_mlp(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    dims: &[usize],
) -> Result<()> {
    for (i, pair) in dims.windows(2).enumerate() {
        store.register_linear(&format!("{prefix}.{i}"), pair[0], pair[1], rng)?;
    }
    Ok(())
}

/// One affine layer `{prefix}.w` / `{prefix}.b` applied to the last dim.
pub fn linear(g: &mut Graph, store: &ParamStore, prefix: &str, x: NodeId) -> Result<NodeId> {
    let w = g.param(store, &format!("{prefix}.w"))?;
    let b = g.param(store, &format!("{prefix}.b"))?;
    let y = g.matmul(x, w)?;
    g.bias_add(y, b)
}

/// MLP registered by [`register_mlp`]: ReLU between layers, raw final output.
pub fn mlp(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    layers: usize,
    x: NodeId,
) -> Result<NodeId> {
    let mut h = x;
    for i in 0..layers {
        h = linear(g, store, &format!("{prefix}.{i}"), h)?;
        if i + 1 < layers {
            h = g.relu(h);
        }
    }
    Ok(h)
}

/// Registers LayerNorm gain/bias as `{prefix}.g` / `{prefix}.b`.
pub fn register_layer_norm(store: &mut ParamStore, prefix: &str, dim: usize) -> Result<()> {
    store.register(&format!("{prefix}.g"), Array::full(&[dim], 1.0))?;
    store.register(&format!("{prefix}.b"), Array::zeros(&[dim]))
}

pub fn layer_norm(g: &mut Graph, store: &ParamStore, prefix: &str, x: NodeId) -> Result<NodeId> {
    let gain = g.param(store, &format!("{prefix}.g"))?;
    let bias = g.param(store, &format!("{prefix}.b"))?;
    g.layer_norm(x, gain, bias)
}
