//! The multi-domain CTR network: a shared embedding, a shared tower and
//! per-domain towers, an exponential-moving-average bank of per-domain
//! feature vectors, attention-based integration of those vectors into each
//! prediction, and per-domain output heads.
//!
//! Trainable parameters split into two disjoint groups: the *shared* set
//! (embedding tables, shared tower, the three integration projections) and
//! the *domain-specific* set (each domain's tower and head). The bank is
//! not trainable — it enters the forward pass as a constant and never
//! receives gradients.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId, PROB_EPS};
use crate::nn::{register_affine, register_embedding, register_mlp, ForwardCtx};
use crate::params::{ParamStore, Scope};
use crate::rng;
use crate::tensor::Tensor;

/// Which parts of the architecture a model instance uses. Fixed at
/// construction; the ablation study trains one model per mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Everything: bank, integration, per-domain towers and heads.
    #[default]
    Full,
    /// Bank maintained and its vector fed to the head, but no attention
    /// integration (drops the z input).
    NoDfi,
    /// Per-domain towers and heads only; no bank, no integration.
    NoDfei,
    /// One shared tower and one shared head; domains are ignored.
    SingleMlp,
}

impl Variant {
    pub const ALL: [Variant; 4] =
        [Variant::Full, Variant::NoDfi, Variant::NoDfei, Variant::SingleMlp];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoDfi => "no_dfi",
            Variant::NoDfei => "no_dfei",
            Variant::SingleMlp => "single_mlp",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "no_dfi" => Ok(Variant::NoDfi),
            "no_dfei" => Ok(Variant::NoDfei),
            "single_mlp" => Ok(Variant::SingleMlp),
            other => Err(Error::Argument(format!(
                "unknown variant {other:?}; expected full, no_dfi, no_dfei, or single_mlp"
            ))),
        }
    }
}

fn default_embed_dim() -> usize {
    16
}
fn default_tower_dims() -> Vec<usize> {
    vec![128, 64, 32]
}
fn default_dropout() -> Vec<f64> {
    vec![0.1, 0.2, 0.3]
}
fn default_attention_dim() -> usize {
    32
}
fn default_decay() -> f64 {
    0.9
}
fn default_head_dims() -> Vec<usize> {
    vec![64, 32]
}
fn default_l2() -> f64 {
    1e-6
}

/// Complete architecture description. The first three fields come from the
/// dataset; the rest default to the published configuration.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub num_domains: usize,
    /// Categorical feature count per sample.
    pub fields: usize,
    /// Per-field vocabulary sizes, excluding the out-of-vocabulary bucket.
    pub vocab_sizes: Vec<usize>,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default = "default_tower_dims")]
    pub tower_dims: Vec<usize>,
    #[serde(default = "default_dropout")]
    pub dropout_rates: Vec<f64>,
    /// Width of the integration projections and of the integrated vector z.
    #[serde(default = "default_attention_dim")]
    pub attention_dim: usize,
    /// EMA decay of the domain-feature bank.
    #[serde(default = "default_decay")]
    pub decay: f64,
    /// Hidden widths of each prediction head (a final 1-unit sigmoid layer
    /// is always appended).
    #[serde(default = "default_head_dims")]
    pub head_dims: Vec<usize>,
    /// L2 regularization strength applied to weight matrices.
    #[serde(default = "default_l2")]
    pub l2: f64,
    #[serde(default)]
    pub variant: Variant,
}

impl ModelConfig {
    /// A config with the published default hyperparameters.
    pub fn new(num_domains: usize, fields: usize, vocab_sizes: Vec<usize>) -> Self {
        Self {
            num_domains,
            fields,
            vocab_sizes,
            embed_dim: default_embed_dim(),
            tower_dims: default_tower_dims(),
            dropout_rates: default_dropout(),
            attention_dim: default_attention_dim(),
            decay: default_decay(),
            head_dims: default_head_dims(),
            l2: default_l2(),
            variant: Variant::Full,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.num_domains == 0 {
            return fail("num_domains must be at least 1".into());
        }
        if self.fields == 0 || self.vocab_sizes.len() != self.fields {
            return fail(format!(
                "fields = {} but vocab_sizes has {} entries",
                self.fields,
                self.vocab_sizes.len()
            ));
        }
        if self.vocab_sizes.iter().any(|&v| v == 0) {
            return fail("every vocabulary must have at least one value".into());
        }
        if self.embed_dim == 0 {
            return fail("embed_dim must be positive".into());
        }
        if self.tower_dims.is_empty() {
            return fail("tower_dims must name at least one layer".into());
        }
        if self.tower_dims.len() != self.dropout_rates.len() {
            return fail(format!(
                "{} tower layers but {} dropout rates",
                self.tower_dims.len(),
                self.dropout_rates.len()
            ));
        }
        if let Some(r) = self.dropout_rates.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return fail(format!("dropout rate {r} outside [0, 1)"));
        }
        if self.attention_dim == 0 {
            return fail("attention_dim must be positive".into());
        }
        if !(self.decay.is_finite() && (0.0..=1.0).contains(&self.decay)) {
            return fail(format!("decay {} outside [0, 1]", self.decay));
        }
        if self.tower_dims.iter().chain(&self.head_dims).any(|&d| d == 0) {
            return fail("layer widths must be positive".into());
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return fail(format!("l2 must be finite and non-negative, got {}", self.l2));
        }
        Ok(())
    }

    /// Output width of both towers (the bank vector dimension).
    pub fn tower_out(&self) -> usize {
        *self.tower_dims.last().expect("validated non-empty")
    }

    /// Width of the concatenated embedding row.
    pub fn embed_width(&self) -> usize {
        self.fields * self.embed_dim
    }

    /// Width of the concatenated head input under this config's variant.
    pub fn head_input_width(&self) -> usize {
        let t = self.tower_out();
        match self.variant {
            Variant::Full => 3 * t + self.attention_dim,
            Variant::NoDfi => 3 * t,
            Variant::NoDfei => 2 * t,
            Variant::SingleMlp => t,
        }
    }
}

/// Per-domain feature vectors maintained as exponential moving averages of
/// batch-mean tower outputs.
///
/// The first update of a domain sets its vector to the batch mean exactly;
/// later updates blend with weight `decay` on the old value. Vectors are
/// constants to the autodiff graph — they never receive gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainFeatureBank {
    decay: f64,
    dim: usize,
    vectors: Vec<Vec<f64>>,
    initialized: Vec<bool>,
    steps: Vec<u64>,
}

impl DomainFeatureBank {
    pub fn new(num_domains: usize, dim: usize, decay: f64) -> Result<Self> {
        if num_domains == 0 || dim == 0 {
            return Err(Error::Argument("bank needs at least one domain and one dimension".into()));
        }
        if !(decay.is_finite() && (0.0..=1.0).contains(&decay)) {
            return Err(Error::Argument(format!("decay {decay} outside [0, 1]")));
        }
        Ok(Self {
            decay,
            dim,
            vectors: vec![vec![0.0; dim]; num_domains],
            initialized: vec![false; num_domains],
            steps: vec![0; num_domains],
        })
    }

    /// Rebuilds a bank from checkpointed state.
    pub fn from_parts(
        decay: f64,
        dim: usize,
        vectors: Vec<Vec<f64>>,
        initialized: Vec<bool>,
        steps: Vec<u64>,
    ) -> Result<Self> {
        let d = vectors.len();
        if d == 0 || initialized.len() != d || steps.len() != d {
            return Err(Error::Checkpoint("bank state arrays disagree on domain count".into()));
        }
        if vectors.iter().any(|v| v.len() != dim) {
            return Err(Error::Checkpoint(format!("bank vector width differs from dim {dim}")));
        }
        let mut bank = Self::new(d, dim, decay).map_err(|e| Error::Checkpoint(e.to_string()))?;
        bank.vectors = vectors;
        bank.initialized = initialized;
        bank.steps = steps;
        Ok(bank)
    }

    pub fn num_domains(&self) -> usize {
        self.vectors.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn is_initialized(&self, d: usize) -> bool {
        self.initialized.get(d).copied().unwrap_or(false)
    }

    pub fn all_initialized(&self) -> bool {
        self.initialized.iter().all(|&b| b)
    }

    /// Number of updates applied to domain `d`.
    pub fn steps(&self, d: usize) -> u64 {
        self.steps.get(d).copied().unwrap_or(0)
    }

    /// Domain `d`'s current vector; an error if it was never updated.
    pub fn vector(&self, d: usize) -> Result<&[f64]> {
        if d >= self.vectors.len() {
            return Err(Error::Argument(format!("bank has no domain {d}")));
        }
        if !self.initialized[d] {
            return Err(Error::State(format!("domain {d} bank vector is uninitialized")));
        }
        Ok(&self.vectors[d])
    }

    /// Raw state for checkpointing: (vectors, initialized flags, steps).
    pub fn parts(&self) -> (&[Vec<f64>], &[bool], &[u64]) {
        (&self.vectors, &self.initialized, &self.steps)
    }

    /// Folds a batch of tower outputs `u` (shape [B, dim]) into domain
    /// `d`'s vector: mean-pool over the batch, then either adopt the mean
    /// (first update) or blend `decay * old + (1 - decay) * mean`.
    pub fn dfe_update(&mut self, d: usize, u: &Tensor) -> Result<()> {
        if d >= self.vectors.len() {
            return Err(Error::Argument(format!("bank has no domain {d}")));
        }
        let (_, cols) = u.dims2()?;
        if cols != self.dim {
            return Err(Error::Shape(format!(
                "bank dimension is {} but update has width {cols}",
                self.dim
            )));
        }
        if !u.all_finite() {
            return Err(Error::Numeric(format!("non-finite tower output in bank update for domain {d}")));
        }
        let pooled = u.mean_rows()?;
        if self.initialized[d] {
            let a = self.decay;
            for (v, &p) in self.vectors[d].iter_mut().zip(pooled.data()) {
                *v = a * *v + (1.0 - a) * p;
            }
        } else {
            self.vectors[d].copy_from_slice(pooled.data());
            self.initialized[d] = true;
        }
        self.steps[d] += 1;
        Ok(())
    }

    /// All vectors stacked into a [D, dim] matrix; an error names the first
    /// uninitialized domain.
    fn matrix(&self) -> Result<Tensor> {
        let mut data = Vec::with_capacity(self.vectors.len() * self.dim);
        for d in 0..self.vectors.len() {
            data.extend_from_slice(self.vector(d)?);
        }
        Tensor::from_vec(&[self.vectors.len(), self.dim], data)
    }
}

/// A completed forward pass: the tape (for loss construction and
/// backprop), the prediction node, and detached side products.
pub struct Forward {
    pub graph: Graph,
    /// Predicted probabilities, shape [B].
    pub yhat: NodeId,
    /// Mean of the domain tower's outputs over the batch, detached — the
    /// input to the post-step bank update. `None` for variants without a
    /// bank.
    pub pooled_u: Option<Tensor>,
    /// Integration weights, shape [B, num_domains]; `None` unless the
    /// variant runs the attention step.
    pub attention: Option<Tensor>,
}

/// Batch-mean of a [B, t] tower output as a [1, t] row, the shape the
/// bank update consumes.
fn pooled_row(u: &Tensor) -> Result<Tensor> {
    let m = u.mean_rows()?;
    let w = m.len();
    Tensor::from_vec(&[1, w], m.data().to_vec())
}

const SHARED_TOWER: &str = "shared_tower";

fn domain_tower(d: usize) -> String {
    format!("domain{d}.tower")
}

fn head_prefix(variant: Variant, d: usize) -> String {
    match variant {
        Variant::SingleMlp => "head".to_string(),
        _ => format!("domain{d}.head"),
    }
}

/// The model: parameter store plus bank, built for one [`ModelConfig`].
#[derive(Debug, Clone)]
pub struct DfeiModel {
    config: ModelConfig,
    pub params: ParamStore,
    bank: Option<DomainFeatureBank>,
}

impl DfeiModel {
    /// Builds and initializes all parameters from name-keyed streams of
    /// `seed`, so values depend only on (seed, parameter name).
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let ew = config.embed_width();
        let t = config.tower_out();
        let k = config.attention_dim;

        for (f, &v) in config.vocab_sizes.iter().enumerate() {
            register_embedding(
                &mut params,
                seed,
                &format!("embed.f{f}"),
                v + 1, // final row is the out-of-vocabulary bucket
                config.embed_dim,
                Scope::Shared,
            );
        }
        register_mlp(&mut params, seed, SHARED_TOWER, ew, &config.tower_dims, Scope::Shared);
        if config.variant == Variant::Full {
            register_affine(&mut params, seed, "h1", t, k, Scope::Shared);
            register_affine(&mut params, seed, "h2", ew, k, Scope::Shared);
            register_affine(&mut params, seed, "h3", t, k, Scope::Shared);
        }
        match config.variant {
            Variant::SingleMlp => {
                let prefix = head_prefix(config.variant, 0);
                let head_in = config.head_input_width();
                register_mlp(&mut params, seed, &prefix, head_in, &config.head_dims, Scope::Shared);
                let last = config.head_dims.last().copied().unwrap_or(head_in);
                register_affine(&mut params, seed, &format!("{prefix}.out"), last, 1, Scope::Shared);
            }
            _ => {
                for d in 0..config.num_domains {
                    register_mlp(
                        &mut params,
                        seed,
                        &domain_tower(d),
                        ew,
                        &config.tower_dims,
                        Scope::Domain(d),
                    );
                    let prefix = head_prefix(config.variant, d);
                    let head_in = config.head_input_width();
                    register_mlp(&mut params, seed, &prefix, head_in, &config.head_dims, Scope::Domain(d));
                    let last = config.head_dims.last().copied().unwrap_or(head_in);
                    register_affine(
                        &mut params,
                        seed,
                        &format!("{prefix}.out"),
                        last,
                        1,
                        Scope::Domain(d),
                    );
                }
            }
        }

        let bank = match config.variant {
            Variant::Full | Variant::NoDfi => {
                Some(DomainFeatureBank::new(config.num_domains, t, config.decay)?)
            }
            Variant::NoDfei | Variant::SingleMlp => None,
        };
        Ok(Self { config, params, bank })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn bank(&self) -> Option<&DomainFeatureBank> {
        self.bank.as_ref()
    }

    /// Replaces the bank wholesale (checkpoint restore).
    pub fn set_bank(&mut self, bank: DomainFeatureBank) -> Result<()> {
        match &self.bank {
            Some(existing)
                if existing.num_domains() == bank.num_domains() && existing.dim() == bank.dim() =>
            {
                self.bank = Some(bank);
                Ok(())
            }
            Some(existing) => Err(Error::Checkpoint(format!(
                "bank shape {}x{} does not match model's {}x{}",
                bank.num_domains(),
                bank.dim(),
                existing.num_domains(),
                existing.dim()
            ))),
            None => Err(Error::Checkpoint(
                "checkpoint carries a bank but this variant has none".into(),
            )),
        }
    }

    /// Applies a bank update with a batch of domain-tower outputs.
    pub fn dfe_update(&mut self, d: usize, u: &Tensor) -> Result<()> {
        match &mut self.bank {
            Some(bank) => bank.dfe_update(d, u),
            None => Err(Error::State(format!(
                "variant {} maintains no domain-feature bank",
                self.config.variant
            ))),
        }
    }

    /// Initializes domain `batch.domain`'s bank vector from one
    /// gradient-free evaluation-mode pass (no-op for bankless variants).
    pub fn warm_up(&mut self, batch: &Batch) -> Result<()> {
        if self.bank.is_none() {
            return Ok(());
        }
        self.check_batch(batch)?;
        let mut ctx = ForwardCtx::new(&self.params, false);
        let e = self.build_embed(&mut ctx, batch)?;
        let mut unused = rng::stream(0, "dropout", "eval");
        let u = ctx.mlp(
            e,
            &domain_tower(batch.domain),
            self.config.tower_dims.len(),
            &self.config.dropout_rates,
            &mut unused,
        )?;
        let u_vals = ctx.value(u).clone();
        self.dfe_update(batch.domain, &u_vals)
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Argument("empty batch".into()));
        }
        if batch.domain >= self.config.num_domains {
            return Err(Error::Argument(format!(
                "batch domain {} out of range for {} domains",
                batch.domain, self.config.num_domains
            )));
        }
        if batch.field_ids.len() != self.config.fields {
            return Err(Error::Shape(format!(
                "batch has {} feature fields, model expects {}",
                batch.field_ids.len(),
                self.config.fields
            )));
        }
        Ok(())
    }

    /// Looks up and concatenates all field embeddings: [B, fields × embed_dim].
    fn build_embed(&self, ctx: &mut ForwardCtx, batch: &Batch) -> Result<NodeId> {
        let mut parts = Vec::with_capacity(self.config.fields);
        for (f, ids) in batch.field_ids.iter().enumerate() {
            let vocab = self.config.vocab_sizes[f];
            if let Some(row) = ids.iter().position(|&id| id > vocab) {
                return Err(Error::Data(format!(
                    "sample {row}, field {f}: id {} exceeds vocabulary size {vocab} (+1 OOV)",
                    ids[row]
                )));
            }
            let table = ctx.param(&format!("embed.f{f}"))?;
            parts.push(ctx.graph.gather(table, ids)?);
        }
        ctx.graph.concat_cols(&parts)
    }

    /// Broadcast of domain `d`'s bank vector to `rows` rows, as a constant.
    fn build_bank_row(&self, ctx: &mut ForwardCtx, d: usize, rows: usize) -> Result<NodeId> {
        let bank = self.bank.as_ref().ok_or_else(|| {
            Error::State(format!("variant {} maintains no domain-feature bank", self.config.variant))
        })?;
        let v = Tensor::from_vec(&[bank.dim()], bank.vector(d)?.to_vec())?;
        let c = ctx.graph.constant(v);
        ctx.graph.broadcast_row(c, rows)
    }

    /// The attention step: projects the embedding row to a per-sample
    /// query, every bank vector to a key and a value, and mixes the values
    /// by softmax of scaled dot products. Returns (z, weights).
    fn build_dfi(&self, ctx: &mut ForwardCtx, e: NodeId) -> Result<(NodeId, NodeId)> {
        let bank = self.bank.as_ref().ok_or_else(|| {
            Error::State(format!("variant {} maintains no domain-feature bank", self.config.variant))
        })?;
        let mat = ctx.graph.constant(bank.matrix()?);
        let query = ctx.affine(e, "h2")?; // [B, k]
        let keys = ctx.affine(mat, "h3")?; // [D, k]
        let values = ctx.affine(mat, "h1")?; // [D, k]
        let scores = ctx.graph.matmul_nt(query, keys)?; // [B, D]
        let scaled = ctx.graph.scale(scores, 1.0 / (self.config.attention_dim as f64).sqrt());
        let weights = ctx.graph.softmax_rows(scaled)?;
        let z = ctx.graph.matmul(weights, values)?; // [B, k]
        Ok((z, weights))
    }

    /// The head: hidden ReLU layers (no dropout), then a one-unit affine
    /// layer and a sigmoid.
    fn build_head(&self, ctx: &mut ForwardCtx, x: NodeId, prefix: &str) -> Result<NodeId> {
        let mut unused = rng::stream(0, "dropout", "eval");
        let no_dropout = vec![0.0; self.config.head_dims.len()];
        let hidden = ctx.mlp(x, prefix, self.config.head_dims.len(), &no_dropout, &mut unused)?;
        let logit = ctx.affine(hidden, &format!("{prefix}.out"))?;
        Ok(ctx.graph.sigmoid(logit))
    }

    /// Runs the variant's forward pass over one single-domain batch.
    ///
    /// `training` enables dropout, drawing masks from `mask_rng`;
    /// evaluation passes never touch the RNG. The returned graph holds the
    /// full tape, so callers can extend it with a loss and differentiate.
    pub fn forward(
        &self,
        batch: &Batch,
        training: bool,
        mask_rng: &mut impl rand::Rng,
    ) -> Result<Forward> {
        self.check_batch(batch)?;
        let mut ctx = ForwardCtx::new(&self.params, training);
        let e = self.build_embed(&mut ctx, batch)?;
        let layers = self.config.tower_dims.len();
        let rates = &self.config.dropout_rates;

        let (yhat, pooled_u, attention) = match self.config.variant {
            Variant::Full => {
                let s = ctx.mlp(e, SHARED_TOWER, layers, rates, mask_rng)?;
                let u = ctx.mlp(e, &domain_tower(batch.domain), layers, rates, mask_rng)?;
                let v = self.build_bank_row(&mut ctx, batch.domain, batch.len())?;
                let (z, w) = self.build_dfi(&mut ctx, e)?;
                let cat = ctx.graph.concat_cols(&[s, u, v, z])?;
                let yhat =
                    self.build_head(&mut ctx, cat, &head_prefix(Variant::Full, batch.domain))?;
                let pooled = pooled_row(ctx.value(u))?;
                let weights = ctx.value(w).clone();
                (yhat, Some(pooled), Some(weights))
            }
            Variant::NoDfi => {
                let s = ctx.mlp(e, SHARED_TOWER, layers, rates, mask_rng)?;
                let u = ctx.mlp(e, &domain_tower(batch.domain), layers, rates, mask_rng)?;
                let v = self.build_bank_row(&mut ctx, batch.domain, batch.len())?;
                let cat = ctx.graph.concat_cols(&[s, u, v])?;
                let yhat =
                    self.build_head(&mut ctx, cat, &head_prefix(Variant::NoDfi, batch.domain))?;
                let pooled = pooled_row(ctx.value(u))?;
                (yhat, Some(pooled), None)
            }
            Variant::NoDfei => {
                let s = ctx.mlp(e, SHARED_TOWER, layers, rates, mask_rng)?;
                let u = ctx.mlp(e, &domain_tower(batch.domain), layers, rates, mask_rng)?;
                let cat = ctx.graph.concat_cols(&[s, u])?;
                let yhat =
                    self.build_head(&mut ctx, cat, &head_prefix(Variant::NoDfei, batch.domain))?;
                (yhat, None, None)
            }
            Variant::SingleMlp => {
                let s = ctx.mlp(e, SHARED_TOWER, layers, rates, mask_rng)?;
                let yhat =
                    self.build_head(&mut ctx, s, &head_prefix(Variant::SingleMlp, batch.domain))?;
                (yhat, None, None)
            }
        };
        // The head emits [B, 1]; losses and reports consume a flat vector.
        let yhat = ctx.graph.reshape(yhat, &[batch.len()])?;
        Ok(Forward { graph: ctx.graph, yhat, pooled_u, attention })
    }

    /// Evaluation-mode probabilities for one batch, clamped strictly inside
    /// (0, 1) so downstream log-losses are finite.
    pub fn predict(&self, batch: &Batch) -> Result<Vec<f64>> {
        let mut unused = rng::stream(0, "dropout", "eval");
        let fwd = self.forward(batch, false, &mut unused)?;
        Ok(fwd
            .graph
            .value(fwd.yhat)
            .data()
            .iter()
            .map(|p| p.clamp(PROB_EPS, 1.0 - PROB_EPS))
            .collect())
    }

    /// The concatenated embedding rows for a batch (evaluation values).
    pub fn embed(&self, batch: &Batch) -> Result<Tensor> {
        self.check_batch(batch)?;
        let mut ctx = ForwardCtx::new(&self.params, false);
        let e = self.build_embed(&mut ctx, batch)?;
        Ok(ctx.value(e).clone())
    }

    /// Evaluation-mode (shared, domain) tower outputs for a batch.
    pub fn towers(&self, batch: &Batch) -> Result<(Tensor, Tensor)> {
        if self.config.variant == Variant::SingleMlp {
            return Err(Error::State("single_mlp model has no domain towers".into()));
        }
        self.check_batch(batch)?;
        let mut ctx = ForwardCtx::new(&self.params, false);
        let e = self.build_embed(&mut ctx, batch)?;
        let mut unused = rng::stream(0, "dropout", "eval");
        let layers = self.config.tower_dims.len();
        let s = ctx.mlp(e, SHARED_TOWER, layers, &self.config.dropout_rates, &mut unused)?;
        let u = ctx.mlp(
            e,
            &domain_tower(batch.domain),
            layers,
            &self.config.dropout_rates,
            &mut unused,
        )?;
        Ok((ctx.value(s).clone(), ctx.value(u).clone()))
    }

    /// The integration step on a raw embedding matrix: returns (z, weights)
    /// as evaluation values.
    pub fn dfi_integrate(&self, e: &Tensor) -> Result<(Tensor, Tensor)> {
        if self.config.variant != Variant::Full {
            return Err(Error::State(format!(
                "variant {} does not run the integration step",
                self.config.variant
            )));
        }
        let (_, cols) = e.dims2()?;
        if cols != self.config.embed_width() {
            return Err(Error::Shape(format!(
                "embedding width {cols} does not match model width {}",
                self.config.embed_width()
            )));
        }
        let mut ctx = ForwardCtx::new(&self.params, false);
        let e = ctx.graph.constant(e.clone());
        let (z, w) = self.build_dfi(&mut ctx, e)?;
        Ok((ctx.value(z).clone(), ctx.value(w).clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::compute_gradients;
    use crate::nn::softmax;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            embed_dim: 2,
            tower_dims: vec![3, 2],
            dropout_rates: vec![0.0, 0.0],
            attention_dim: 2,
            head_dims: vec![3],
            ..ModelConfig::new(3, 2, vec![5, 4])
        }
    }

    fn batch(domain: usize, ids: &[(usize, usize)], labels: &[f64]) -> Batch {
        Batch {
            domain,
            field_ids: vec![
                ids.iter().map(|&(a, _)| a).collect(),
                ids.iter().map(|&(_, b)| b).collect(),
            ],
            labels: labels.to_vec(),
        }
    }

    /// Warm-starts every domain's bank vector so full-variant forwards run.
    fn warmed_model(config: ModelConfig, seed: u64) -> DfeiModel {
        let mut model = DfeiModel::new(config, seed).unwrap();
        for d in 0..model.config().num_domains {
            model.warm_up(&batch(d, &[(d, 0), (0, d)], &[1.0, 0.0])).unwrap();
        }
        model
    }

    #[test]
    fn defaults_match_published_table() {
        let c = ModelConfig::new(6, 4, vec![10; 4]);
        assert_eq!(c.embed_dim, 16);
        assert_eq!(c.tower_dims, vec![128, 64, 32]);
        assert_eq!(c.dropout_rates, vec![0.1, 0.2, 0.3]);
        assert_eq!(c.attention_dim, 32);
        assert_eq!(c.decay, 0.9);
        assert_eq!(c.head_dims, vec![64, 32]);
        assert_eq!(c.l2, 1e-6);
        assert_eq!(c.variant, Variant::Full);
        c.validate().unwrap();
    }

    #[test]
    fn config_validation_rejects_bad_shapes() {
        let mut c = ModelConfig::new(2, 2, vec![3, 3]);
        c.dropout_rates = vec![0.1];
        assert!(matches!(c.validate(), Err(Error::Config(_))));

        let mut c = ModelConfig::new(2, 2, vec![3, 3]);
        c.attention_dim = 0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));

        let mut c = ModelConfig::new(2, 2, vec![3, 3]);
        c.decay = 1.5;
        assert!(matches!(c.validate(), Err(Error::Config(_))));

        let c = ModelConfig::new(2, 3, vec![3, 3]); // fields/vocabs mismatch
        assert!(matches!(c.validate(), Err(Error::Config(_))));

        let mut c = ModelConfig::new(2, 2, vec![3, 3]);
        c.tower_dims.clear();
        c.dropout_rates.clear();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn head_width_follows_variant() {
        // Tower output 32 and attention width 32 as in the defaults.
        for (variant, want) in [
            (Variant::Full, 128),
            (Variant::NoDfi, 96),
            (Variant::NoDfei, 64),
            (Variant::SingleMlp, 32),
        ] {
            let mut c = ModelConfig::new(6, 4, vec![10; 4]);
            c.variant = variant;
            assert_eq!(c.head_input_width(), want, "{variant}");
        }
    }

    #[test]
    fn bank_first_update_adopts_the_batch_mean() {
        let mut bank = DomainFeatureBank::new(2, 2, 0.9).unwrap();
        let u = Tensor::from_vec(&[2, 2], vec![1.0, 3.0, 3.0, 1.0]).unwrap();
        bank.dfe_update(0, &u).unwrap();
        assert_eq!(bank.vector(0).unwrap(), &[2.0, 2.0]);
        assert_eq!(bank.steps(0), 1);
        assert!(!bank.is_initialized(1));
    }

    #[test]
    fn bank_ema_blends_with_decay() {
        let mut bank = DomainFeatureBank::new(1, 2, 0.9).unwrap();
        bank.dfe_update(0, &Tensor::from_vec(&[1, 2], vec![1.0, 1.0]).unwrap()).unwrap();
        bank.dfe_update(0, &Tensor::from_vec(&[1, 2], vec![0.0, 0.0]).unwrap()).unwrap();
        assert_eq!(bank.vector(0).unwrap(), &[0.9, 0.9]);
        assert_eq!(bank.steps(0), 2);
    }

    #[test]
    fn bank_decay_boundaries() {
        // decay 1: frozen after the first update.
        let mut frozen = DomainFeatureBank::new(1, 1, 1.0).unwrap();
        frozen.dfe_update(0, &Tensor::from_vec(&[1, 1], vec![5.0]).unwrap()).unwrap();
        for x in [1.0, -3.0, 100.0] {
            frozen.dfe_update(0, &Tensor::from_vec(&[1, 1], vec![x]).unwrap()).unwrap();
        }
        assert_eq!(frozen.vector(0).unwrap(), &[5.0]);

        // decay 0: always the latest mean.
        let mut fresh = DomainFeatureBank::new(1, 1, 0.0).unwrap();
        fresh.dfe_update(0, &Tensor::from_vec(&[1, 1], vec![5.0]).unwrap()).unwrap();
        fresh.dfe_update(0, &Tensor::from_vec(&[2, 1], vec![1.0, 3.0]).unwrap()).unwrap();
        assert_eq!(fresh.vector(0).unwrap(), &[2.0]);
    }

    #[test]
    fn bank_vectors_stay_within_observed_means() {
        let mut bank = DomainFeatureBank::new(1, 3, 0.7).unwrap();
        let mut stream = rng::stream(3, "test", "bank-convexity");
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for _ in 0..50 {
            let u = crate::nn::uniform_tensor(&mut stream, &[4, 3], -2.0, 2.0);
            let mean = u.mean_rows().unwrap();
            for (j, &m) in mean.data().iter().enumerate() {
                lo[j] = lo[j].min(m);
                hi[j] = hi[j].max(m);
            }
            bank.dfe_update(0, &u).unwrap();
            for (j, &v) in bank.vector(0).unwrap().iter().enumerate() {
                assert!(
                    v >= lo[j] - 1e-12 && v <= hi[j] + 1e-12,
                    "coordinate {j} escaped [{}, {}]: {v}",
                    lo[j],
                    hi[j]
                );
            }
        }
    }

    #[test]
    fn bank_rejects_bad_updates() {
        let mut bank = DomainFeatureBank::new(2, 2, 0.5).unwrap();
        let empty = Tensor::zeros(&[0, 2]);
        assert!(matches!(bank.dfe_update(0, &empty), Err(Error::Argument(_))));
        let wrong = Tensor::zeros(&[1, 3]);
        assert!(matches!(bank.dfe_update(0, &wrong), Err(Error::Shape(_))));
        assert!(matches!(bank.dfe_update(7, &Tensor::zeros(&[1, 2])), Err(Error::Argument(_))));
        let nan = Tensor::from_vec(&[1, 2], vec![f64::NAN, 0.0]).unwrap();
        assert!(matches!(bank.dfe_update(0, &nan), Err(Error::Numeric(_))));
        let err = bank.vector(1).unwrap_err();
        assert!(matches!(err, Error::State(ref m) if m.contains("domain 1")), "{err}");
    }

    #[test]
    fn parameter_partitions_are_disjoint_and_exhaustive() {
        let model = DfeiModel::new(tiny_config(), 1).unwrap();
        let shared = model.params.names_in_scope(Scope::Shared);
        assert!(shared.iter().any(|n| n == "embed.f0"));
        assert!(shared.iter().any(|n| n == "shared_tower.l0.w"));
        assert!(shared.iter().any(|n| n == "h1.w"));
        assert!(shared.iter().any(|n| n == "h2.b"));
        assert!(shared.iter().any(|n| n == "h3.w"));

        let mut total = shared.len();
        for d in 0..3 {
            let own = model.params.names_in_scope(Scope::Domain(d));
            assert!(own.iter().any(|n| n == &format!("domain{d}.tower.l0.w")));
            assert!(own.iter().any(|n| n == &format!("domain{d}.head.out.w")));
            assert!(own.iter().all(|n| n.starts_with(&format!("domain{d}."))));
            total += own.len();
        }
        assert_eq!(total, model.params.len());
    }

    #[test]
    fn variants_strip_structure() {
        let mut c = tiny_config();
        c.variant = Variant::NoDfei;
        let model = DfeiModel::new(c, 1).unwrap();
        assert!(model.bank().is_none());
        assert!(model.params.get("h1.w").is_err());
        assert!(model.params.get("domain0.tower.l0.w").is_ok());

        let mut c = tiny_config();
        c.variant = Variant::SingleMlp;
        let model = DfeiModel::new(c, 1).unwrap();
        assert!(model.bank().is_none());
        for d in 0..3 {
            assert!(model.params.names_in_scope(Scope::Domain(d)).is_empty());
        }
        assert!(model.params.get("head.out.w").is_ok());

        let mut c = tiny_config();
        c.variant = Variant::NoDfi;
        let model = DfeiModel::new(c, 1).unwrap();
        assert!(model.bank().is_some());
        assert!(model.params.get("h2.w").is_err());
    }

    #[test]
    fn embedding_concatenates_and_shares_rows() {
        let model = DfeiModel::new(tiny_config(), 2).unwrap();
        let b0 = batch(0, &[(1, 2), (3, 0)], &[1.0, 0.0]);
        let e = model.embed(&b0).unwrap();
        assert_eq!(e.shape(), &[2, 4]); // 2 fields x embed_dim 2

        // The same ids produce the same rows regardless of domain.
        let b1 = batch(1, &[(1, 2), (3, 0)], &[1.0, 0.0]);
        assert_eq!(e.data(), model.embed(&b1).unwrap().data());
    }

    #[test]
    fn zeroed_table_row_yields_zero_slice() {
        let mut model = DfeiModel::new(tiny_config(), 2).unwrap();
        model
            .params
            .set_tensor("embed.f0", {
                let mut t = model.params.tensor("embed.f0").unwrap().clone();
                t.row_mut(1).fill(0.0);
                t
            })
            .unwrap();
        let e = model.embed(&batch(0, &[(1, 2)], &[1.0])).unwrap();
        assert_eq!(&e.data()[..2], &[0.0, 0.0]); // field-0 slice
        assert!(e.data()[2..].iter().any(|&x| x != 0.0));
    }

    #[test]
    fn out_of_range_id_names_field_and_row() {
        let model = DfeiModel::new(tiny_config(), 2).unwrap();
        // vocab_sizes[1] = 4, so 5 is one past the OOV bucket (4).
        let err = model.embed(&batch(0, &[(0, 1), (0, 5)], &[1.0, 0.0])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("field 1") && msg.contains("sample 1"), "{msg}");
        // The OOV id itself is legal.
        model.embed(&batch(0, &[(5, 4)], &[1.0])).unwrap();
    }

    #[test]
    fn shared_tower_is_shared_and_domain_towers_differ() {
        let model = DfeiModel::new(tiny_config(), 3).unwrap();
        let (s0, u0) = model.towers(&batch(0, &[(1, 1)], &[1.0])).unwrap();
        let (s1, u1) = model.towers(&batch(1, &[(1, 1)], &[1.0])).unwrap();
        assert_eq!(s0.data(), s1.data());
        assert_ne!(u0.data(), u1.data());
    }

    #[test]
    fn integration_matches_hand_computation() {
        let mut model = DfeiModel::new(tiny_config(), 4).unwrap();
        // Bank vectors via first updates (exact adoption).
        let vs = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        for (d, v) in vs.iter().enumerate() {
            model.dfe_update(d, &Tensor::from_vec(&[1, 2], v.to_vec()).unwrap()).unwrap();
        }
        // Hand-set projections: h1 = identity, h2 = identity on a width-4
        // embedding through a 4x2 selector, h3 = coordinate swap.
        let id2 = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let swap = Tensor::from_vec(&[2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let select =
            Tensor::from_vec(&[4, 2], vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        model.params.set_tensor("h1.w", id2.clone()).unwrap();
        model.params.set_tensor("h2.w", select).unwrap();
        model.params.set_tensor("h3.w", swap).unwrap();

        let e = Tensor::from_vec(&[2, 4], vec![1.0, 2.0, 9.0, 9.0, 0.0, 1.0, 9.0, 9.0]).unwrap();
        let (z, w) = model.dfi_integrate(&e).unwrap();
        assert_eq!(w.shape(), &[2, 3]);
        assert_eq!(z.shape(), &[2, 2]);

        let scale = 1.0 / 2f64.sqrt();
        for row in 0..2 {
            let q = [e.row(row)[0], e.row(row)[1]]; // selector keeps first two
            let logits: Vec<f64> = vs
                .iter()
                .map(|v| {
                    let key = [v[1], v[0]]; // swapped coordinates
                    scale * (q[0] * key[0] + q[1] * key[1])
                })
                .collect();
            let want_w = softmax(&logits).unwrap();
            let mut want_z = [0.0; 2];
            for (j, v) in vs.iter().enumerate() {
                want_z[0] += want_w[j] * v[0]; // h1 = identity
                want_z[1] += want_w[j] * v[1];
            }
            for j in 0..3 {
                assert!((w.row(row)[j] - want_w[j]).abs() < 1e-12);
            }
            for j in 0..2 {
                assert!((z.row(row)[j] - want_z[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_rows_normalize_and_degenerate_cases() {
        let model = warmed_model(tiny_config(), 5);
        let e = model.embed(&batch(0, &[(1, 2), (3, 3), (0, 0)], &[1.0, 0.0, 1.0])).unwrap();
        let (_, w) = model.dfi_integrate(&e).unwrap();
        for row in 0..3 {
            let sum: f64 = w.row(row).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }

        // Zeroed query projection: every sample weights domains uniformly.
        let mut model = warmed_model(tiny_config(), 5);
        model.params.set_tensor("h2.w", Tensor::zeros(&[4, 2])).unwrap();
        let (_, w) = model.dfi_integrate(&e).unwrap();
        for row in 0..3 {
            for j in 0..3 {
                assert!((w.row(row)[j] - 1.0 / 3.0).abs() < 1e-12);
            }
        }

        // One domain: weight exactly 1 and z = h1(v).
        let mut c = tiny_config();
        c.num_domains = 1;
        let mut model = DfeiModel::new(c, 5).unwrap();
        model.warm_up(&batch(0, &[(1, 1)], &[1.0])).unwrap();
        let e = model.embed(&batch(0, &[(2, 2)], &[0.0])).unwrap();
        let (z, w) = model.dfi_integrate(&e).unwrap();
        assert_eq!(w.data(), &[1.0]);
        let v = model.bank().unwrap().vector(0).unwrap().to_vec();
        let mut ctx = ForwardCtx::new(&model.params, false);
        let c = ctx.graph.constant(Tensor::from_vec(&[1, 2], v).unwrap());
        let h1v = ctx.affine(c, "h1").unwrap();
        assert_eq!(z.data(), ctx.value(h1v).data());
    }

    #[test]
    fn zeroed_head_predicts_one_half() {
        let mut model = warmed_model(tiny_config(), 6);
        for name in ["domain0.head.l0.w", "domain0.head.out.w"] {
            let shape = model.params.tensor(name).unwrap().shape().to_vec();
            model.params.set_tensor(name, Tensor::zeros(&shape)).unwrap();
        }
        let p = model.predict(&batch(0, &[(1, 2), (3, 0)], &[1.0, 0.0])).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn prediction_composes_from_stage_outputs() {
        let model = warmed_model(tiny_config(), 7);
        let b = batch(1, &[(1, 2), (3, 3), (0, 1), (4, 0)], &[1.0, 0.0, 1.0, 0.0]);
        let got = model.predict(&b).unwrap();

        // Recompose: embed -> towers -> integration -> head by hand.
        let e = model.embed(&b).unwrap();
        let (s, u) = model.towers(&b).unwrap();
        let (z, _) = model.dfi_integrate(&e).unwrap();
        let v = model.bank().unwrap().vector(1).unwrap();
        let mut cat = Vec::new();
        for row in 0..4 {
            cat.extend_from_slice(s.row(row));
            cat.extend_from_slice(u.row(row));
            cat.extend_from_slice(v);
            cat.extend_from_slice(z.row(row));
        }
        let cat = Tensor::from_vec(&[4, 8], cat).unwrap();
        let mut ctx = ForwardCtx::new(&model.params, false);
        let x = ctx.graph.constant(cat);
        let hidden = {
            let a = ctx.affine(x, "domain1.head.l0").unwrap();
            ctx.graph.relu(a)
        };
        let logit = ctx.affine(hidden, "domain1.head.out").unwrap();
        let want = ctx.graph.sigmoid(logit);
        for (g, w) in got.iter().zip(ctx.value(want).data()) {
            assert!((g - w).abs() < 1e-12, "{g} vs {w}");
        }
    }

    #[test]
    fn gradients_respect_the_domain_partition() {
        let model = warmed_model(tiny_config(), 8);
        let b = batch(1, &[(1, 2), (3, 3)], &[1.0, 0.0]);
        let mut unused = rng::stream(0, "dropout", "eval");
        let mut fwd = model.forward(&b, false, &mut unused).unwrap();
        let loss = fwd.graph.bce_mean(fwd.yhat, &b.labels).unwrap();
        let grads = compute_gradients(&fwd.graph, loss, &model.params).unwrap();

        let zero = |name: &str| grads.get(name).unwrap().data().iter().all(|&g| g == 0.0);
        for d in [0usize, 2] {
            for name in model.params.names_in_scope(Scope::Domain(d)) {
                assert!(zero(&name), "{name} should have an exact-zero gradient");
            }
        }
        assert!(!zero("domain1.tower.l0.w"));
        assert!(!zero("domain1.head.out.w"));
        assert!(!zero("shared_tower.l0.w"));
        assert!(!zero("h2.w"));
    }

    #[test]
    fn bank_is_felt_by_the_loss_but_never_receives_gradients() {
        let mut model = warmed_model(tiny_config(), 9);
        let b = batch(0, &[(1, 2), (3, 3)], &[1.0, 0.0]);
        let before = model.predict(&b).unwrap();

        // No gradient is ever keyed to bank state: every gradient name is a
        // trainable parameter.
        let mut unused = rng::stream(0, "dropout", "eval");
        let mut fwd = model.forward(&b, false, &mut unused).unwrap();
        let loss = fwd.graph.bce_mean(fwd.yhat, &b.labels).unwrap();
        let grads = compute_gradients(&fwd.graph, loss, &model.params).unwrap();
        for (name, _) in grads.iter() {
            assert!(model.params.get(name).is_ok());
        }
        assert_eq!(grads.len(), model.params.len());

        // Yet the forward output is sensitive to the bank's contents.
        let u = Tensor::from_vec(&[1, 2], vec![10.0, -4.0]).unwrap();
        model.dfe_update(0, &u).unwrap();
        let after = model.predict(&b).unwrap();
        assert!(
            before.iter().zip(&after).any(|(a, b)| (a - b).abs() > 1e-9),
            "perturbing the bank should move predictions"
        );
    }

    #[test]
    fn uninitialized_bank_is_a_state_error_naming_the_domain() {
        let mut model = DfeiModel::new(tiny_config(), 10).unwrap();
        model.warm_up(&batch(0, &[(1, 1)], &[1.0])).unwrap();
        model.warm_up(&batch(1, &[(1, 1)], &[1.0])).unwrap();
        // Domain 2 never warmed: full forward needs all bank vectors.
        let err = model.predict(&batch(0, &[(1, 1)], &[1.0])).unwrap_err();
        assert!(matches!(err, Error::State(ref m) if m.contains("domain 2")), "{err}");
    }

    #[test]
    fn evaluation_is_deterministic_and_pure() {
        let model = warmed_model(tiny_config(), 11);
        let b = batch(2, &[(1, 2), (3, 3), (2, 1)], &[1.0, 0.0, 1.0]);
        let bank_before = model.bank().unwrap().clone();
        let tensor_before = model.params.tensor("domain2.head.out.w").unwrap().clone();
        let p1 = model.predict(&b).unwrap();
        let p2 = model.predict(&b).unwrap();
        assert_eq!(p1, p2);
        assert!(p1.iter().all(|&p| p > 0.0 && p < 1.0));
        assert_eq!(model.bank().unwrap(), &bank_before);
        assert_eq!(
            model.params.tensor("domain2.head.out.w").unwrap().data(),
            tensor_before.data()
        );
    }

    #[test]
    fn training_mode_applies_dropout_and_eval_does_not() {
        let mut c = tiny_config();
        c.dropout_rates = vec![0.5, 0.5];
        let model = warmed_model(c, 12);
        let b = batch(0, &[(1, 2), (3, 3)], &[1.0, 0.0]);
        let mut rng1 = rng::stream(100, "dropout", "a");
        let mut rng2 = rng::stream(101, "dropout", "b");
        let f1 = model.forward(&b, true, &mut rng1).unwrap();
        let f2 = model.forward(&b, true, &mut rng2).unwrap();
        let v1 = f1.graph.value(f1.yhat).data().to_vec();
        let v2 = f2.graph.value(f2.yhat).data().to_vec();
        assert_ne!(v1, v2, "different masks should move training outputs");
        assert_eq!(model.predict(&b).unwrap(), model.predict(&b).unwrap());
    }

    #[test]
    fn forward_side_products_follow_the_variant() {
        for (variant, pooled, attention) in [
            (Variant::Full, true, true),
            (Variant::NoDfi, true, false),
            (Variant::NoDfei, false, false),
            (Variant::SingleMlp, false, false),
        ] {
            let mut c = tiny_config();
            c.variant = variant;
            let model = warmed_model(c, 13);
            let b = batch(0, &[(1, 2), (3, 3)], &[1.0, 0.0]);
            let mut unused = rng::stream(0, "dropout", "eval");
            let fwd = model.forward(&b, false, &mut unused).unwrap();
            assert_eq!(fwd.pooled_u.is_some(), pooled, "{variant}");
            assert_eq!(fwd.attention.is_some(), attention, "{variant}");
            let y = fwd.graph.value(fwd.yhat);
            assert_eq!(y.shape(), &[2]);
            assert!(y.data().iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn batch_shape_errors_are_reported() {
        let model = warmed_model(tiny_config(), 14);
        let empty = Batch { domain: 0, field_ids: vec![vec![], vec![]], labels: vec![] };
        assert!(matches!(model.predict(&empty), Err(Error::Argument(_))));
        let bad_domain = batch(9, &[(1, 1)], &[1.0]);
        assert!(matches!(model.predict(&bad_domain), Err(Error::Argument(_))));
        let bad_fields = Batch { domain: 0, field_ids: vec![vec![1]], labels: vec![1.0] };
        assert!(matches!(model.predict(&bad_fields), Err(Error::Shape(_))));
    }

    #[test]
    fn variant_tags_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("mlp".parse::<Variant>().is_err());
    }
}
