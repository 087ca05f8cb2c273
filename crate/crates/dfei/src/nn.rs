//! Layer initialization and forward-pass composition on top of the graph.
//!
//! Parameters live in a [`ParamStore`] under hierarchical names
//! (`shared_tower.l0.w`, `domain3.head.l1.b`, ...). The helpers here insert
//! freshly initialized layers and replay them through a [`ForwardCtx`] that
//! memoizes parameter leaves, so a tensor enters the graph once per pass no
//! matter how many branches read it.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{softmax_in_place, Graph, NodeId};
use crate::params::{ParamStore, Scope};
use crate::rng;
use crate::tensor::Tensor;

/// Numerically stable softmax of one logit vector.
///
/// The maximum is subtracted before exponentiation, so inputs of any
/// magnitude map to a proper distribution without overflow.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Argument("softmax of an empty slice".to_string()));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("softmax input contains non-finite values".to_string()));
    }
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

/// A tensor with entries drawn from U(lo, hi).
pub fn uniform_tensor(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng::uniform(rng, lo, hi);
    }
    t
}

/// Glorot-uniform weight matrix of shape `[in_dim, out_dim]`:
/// entries from U(±sqrt(6 / (in_dim + out_dim))).
pub fn glorot_uniform(rng: &mut impl Rng, in_dim: usize, out_dim: usize) -> Tensor {
    let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
    uniform_tensor(rng, &[in_dim, out_dim], -limit, limit)
}

/// Inserts an affine layer: `{prefix}.w` of shape `[in_dim, out_dim]`
/// (Glorot-uniform) and `{prefix}.b` of shape `[out_dim]` (zeros).
///
/// Each weight is initialized from its own name-keyed stream, so the values
/// depend only on `(master_seed, name)` and not on registration order.
pub fn register_affine(
    store: &mut ParamStore,
    master_seed: u64,
    prefix: &str,
    in_dim: usize,
    out_dim: usize,
    scope: Scope,
) {
    let w_name = format!("{prefix}.w");
    let mut stream = rng::stream(master_seed, "init", &w_name);
    store.insert(w_name, scope, true, glorot_uniform(&mut stream, in_dim, out_dim));
    store.insert(format!("{prefix}.b"), scope, false, Tensor::zeros(&[out_dim]));
}

/// Inserts a stack of affine layers named `{prefix}.l0`, `{prefix}.l1`, ...
/// mapping `in_dim` through each entry of `dims`.
pub fn register_mlp(
    store: &mut ParamStore,
    master_seed: u64,
    prefix: &str,
    in_dim: usize,
    dims: &[usize],
    scope: Scope,
) {
    let mut d = in_dim;
    for (i, &out) in dims.iter().enumerate() {
        register_affine(store, master_seed, &format!("{prefix}.l{i}"), d, out, scope);
        d = out;
    }
}

/// Inserts an embedding table of shape `[rows, cols]` with entries from
/// U(-0.05, 0.05). Tables count as weights for L2 purposes.
pub fn register_embedding(
    store: &mut ParamStore,
    master_seed: u64,
    name: &str,
    rows: usize,
    cols: usize,
    scope: Scope,
) {
    let mut stream = rng::stream(master_seed, "init", name);
    store.insert(name.to_string(), scope, true, uniform_tensor(&mut stream, &[rows, cols], -0.05, 0.05));
}

/// One forward pass under construction.
///
/// Wraps a [`Graph`] plus the parameter store backing it; parameter leaves
/// are memoized by name. Dropout layers are active only when `training` is
/// set — evaluation passes never draw from the mask RNG.
pub struct ForwardCtx<'a> {
    pub graph: Graph,
    store: &'a ParamStore,
    leaves: HashMap<String, NodeId>,
    training: bool,
}

impl<'a> ForwardCtx<'a> {
    pub fn new(store: &'a ParamStore, training: bool) -> Self {
        Self { graph: Graph::new(), store, leaves: HashMap::new(), training }
    }

    pub fn training(&self) -> bool {
        self.training
    }

    /// The graph leaf for a named parameter, created on first use.
    pub fn param(&mut self, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.leaves.get(name) {
            return Ok(id);
        }
        let value = self.store.tensor(name)?.clone();
        let id = self.graph.param(name, value);
        self.leaves.insert(name.to_string(), id);
        Ok(id)
    }

    /// `x @ {prefix}.w + {prefix}.b`.
    pub fn affine(&mut self, x: NodeId, prefix: &str) -> Result<NodeId> {
        let w = self.param(&format!("{prefix}.w"))?;
        let b = self.param(&format!("{prefix}.b"))?;
        let xw = self
            .graph
            .matmul(x, w)
            .map_err(|e| Error::Shape(format!("affine `{prefix}`: {e}")))?;
        self.graph.add_bias(xw, b)
    }

    /// An MLP registered via [`register_mlp`]: affine → ReLU → dropout per
    /// layer. `dropout` must list one rate per layer; rates apply only in
    /// training mode (masks are drawn from `mask_rng` with inverted
    /// scaling, so evaluation needs no rescaling).
    pub fn mlp(
        &mut self,
        x: NodeId,
        prefix: &str,
        layers: usize,
        dropout: &[f64],
        mask_rng: &mut impl Rng,
    ) -> Result<NodeId> {
        if dropout.len() != layers {
            return Err(Error::Argument(format!(
                "mlp `{prefix}` has {layers} layers but {} dropout rates",
                dropout.len()
            )));
        }
        let mut h = x;
        for (i, &rate) in dropout.iter().enumerate().take(layers) {
            h = self.affine(h, &format!("{prefix}.l{i}"))?;
            h = self.graph.relu(h);
            if self.training {
                h = self.graph.dropout(h, rate, mask_rng)?;
            }
        }
        Ok(h)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        self.graph.value(id)
    }
}

/// Runs a registered MLP over `x` and returns the output activations.
///
/// Convenience wrapper for callers that need the values but not the graph;
/// training code composes [`ForwardCtx`] directly so the whole model shares
/// one tape.
pub fn mlp_forward(
    store: &ParamStore,
    prefix: &str,
    layers: usize,
    x: &Tensor,
    dropout: &[f64],
    training: bool,
    mask_rng: &mut impl Rng,
) -> Result<Tensor> {
    let mut ctx = ForwardCtx::new(store, training);
    let input = ctx.graph.constant(x.clone());
    let out = ctx.mlp(input, prefix, layers, dropout, mask_rng)?;
    Ok(ctx.value(out).clone())
}
