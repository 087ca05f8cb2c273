//! The joint training loop: per-domain batches in a fixed round-robin,
//! Adam with the shared-parameter step size scaled by 1/D, post-step bank
//! refreshes, and early stopping on mean validation AUC.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::data::{index_hash, Batch, BatchCycler, DomainDataset, Fnv, Split};
use crate::error::{Error, Result};
use crate::eval::evaluate_all;
use crate::graph::{compute_gradients, Gradients, NodeId, PROB_EPS};
use crate::model::{DfeiModel, DomainFeatureBank, Forward};
use crate::optim::{Adam, AdamConfig};
use crate::params::Scope;
use crate::rng;

/// Optimization hyperparameters. `l2` is the coefficient on the squared
/// norms of the weight matrices touched by each step (the shared set plus
/// the stepped domain's set); biases are never regularized.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2: f64,
    /// Hard cap on epochs; early stopping usually ends training sooner.
    pub epochs: u64,
    /// Number of consecutive non-improving epochs tolerated before
    /// stopping. 0 stops at the first epoch that fails to improve.
    pub patience: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 512,
            learning_rate: 1e-3,
            l2: 1e-6,
            epochs: 10,
            patience: 3,
            seed: 17,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(Error::Config(format!("l2 must be finite and ≥ 0, got {}", self.l2)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Mean binary cross-entropy with probabilities clamped away from 0 and 1,
/// matching the loss the training graph builds.
pub fn cross_entropy_loss(probs: &[f64], labels: &[f64]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::Argument(format!(
            "{} probabilities but {} labels",
            probs.len(),
            labels.len()
        )));
    }
    if probs.is_empty() {
        return Err(Error::Argument("cross-entropy of an empty batch".into()));
    }
    if let Some(bad) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(Error::Argument(format!("label {bad} is not binary")));
    }
    let sum: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(sum / probs.len() as f64)
}

/// What one optimizer step did: the regularized loss, the step sizes the
/// two parameter groups actually received, and their gradient norms.
#[derive(Debug, Clone, Serialize)]
pub struct StepReport {
    pub domain: usize,
    pub loss: f64,
    pub batch_size: usize,
    /// Step size applied to shared parameters: learning_rate / num_domains.
    pub shared_lr: f64,
    /// Step size applied to the stepped domain's own parameters.
    pub domain_lr: f64,
    pub shared_grad_norm: f64,
    pub domain_grad_norm: f64,
}

/// One epoch's training losses and validation scores.
#[derive(Debug, Clone, Serialize)]
pub struct EpochRecord {
    pub epoch: u64,
    /// Mean per-step training loss, per domain.
    pub domain_loss: Vec<f64>,
    pub domain_val_auc: Vec<Option<f64>>,
    pub avg_val_auc: f64,
    pub improved: bool,
}

/// The full trace of one `fit` call.
#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub steps_per_epoch: u64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: u64,
    pub best_avg_val_auc: f64,
    pub stopped_early: bool,
    /// File name of the best-epoch checkpoint, relative to the output
    /// directory; absent when training ran without one. Reports carry no
    /// absolute paths so identical runs emit identical bytes.
    pub checkpoint_file: Option<String>,
}

/// Steps per epoch: enough batches of size `b` to cover the largest
/// domain once; smaller domains recycle their data within the epoch.
pub(crate) fn steps_per_epoch(max_train: usize, b: usize) -> u64 {
    ((max_train + b - 1) / b) as u64
}

/// Owns a model mid-training: optimizer state, per-domain batch cyclers,
/// the dropout RNG, and progress counters. Checkpoints capture all of it.
#[derive(Debug)]
pub struct Trainer {
    pub model: DfeiModel,
    pub(crate) optimizer: Adam,
    pub(crate) config: TrainConfig,
    pub(crate) cyclers: Vec<BatchCycler>,
    pub(crate) dropout_rng: ChaCha8Rng,
    pub(crate) global_step: u64,
    pub(crate) epoch: u64,
    pub(crate) best_metric: f64,
    pub(crate) audit: Fnv,
    shared_names: Vec<String>,
    domain_names: Vec<Vec<String>>,
}

impl Trainer {
    /// Wires a model to a dataset: validates that they agree on domain
    /// count, field count, and vocabulary sizes, and builds one batch
    /// cycler per domain from the training seed.
    pub fn new(model: DfeiModel, config: TrainConfig, data: &DomainDataset) -> Result<Trainer> {
        config.validate()?;
        let mc = model.config();
        if mc.num_domains != data.num_domains() {
            return Err(Error::Config(format!(
                "model expects {} domains, dataset has {}",
                mc.num_domains,
                data.num_domains()
            )));
        }
        if mc.fields != data.schema.num_fields() {
            return Err(Error::Config(format!(
                "model expects {} feature fields, dataset has {}",
                mc.fields,
                data.schema.num_fields()
            )));
        }
        if mc.vocab_sizes != data.schema.vocab_sizes() {
            return Err(Error::Config(
                "model vocabulary sizes do not match the dataset schema".into(),
            ));
        }
        let mut cyclers = Vec::with_capacity(data.num_domains());
        for d in 0..data.num_domains() {
            let n = data.split(d, Split::Train)?.len();
            if n == 0 {
                return Err(Error::Config(format!("domain {d} has no training samples")));
            }
            cyclers.push(BatchCycler::new(n, config.seed, d)?);
        }
        let shared_names = model.params.names_in_scope(Scope::Shared);
        let domain_names = (0..mc.num_domains)
            .map(|d| model.params.names_in_scope(Scope::Domain(d)))
            .collect();
        let dropout_rng = rng::stream(config.seed, "dropout", "train");
        Ok(Trainer {
            model,
            optimizer: Adam::new(AdamConfig::default()),
            config,
            cyclers,
            dropout_rng,
            global_step: 0,
            epoch: 0,
            best_metric: f64::NEG_INFINITY,
            audit: Fnv::new(),
            shared_names,
            domain_names,
        })
    }

    /// Used by checkpoint loading to rebuild a trainer whose pieces were
    /// restored individually.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn assemble(
        model: DfeiModel,
        optimizer: Adam,
        config: TrainConfig,
        cyclers: Vec<BatchCycler>,
        dropout_rng: ChaCha8Rng,
        global_step: u64,
        epoch: u64,
        best_metric: f64,
        audit: Fnv,
    ) -> Trainer {
        let shared_names = model.params.names_in_scope(Scope::Shared);
        let domain_names = (0..model.config().num_domains)
            .map(|d| model.params.names_in_scope(Scope::Domain(d)))
            .collect();
        Trainer {
            model,
            optimizer,
            config,
            cyclers,
            dropout_rng,
            global_step,
            epoch,
            best_metric,
            audit,
            shared_names,
            domain_names,
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Raises the epoch cap, letting a resumed trainer run past the budget
    /// it was saved with. A cap at or below the current one is a no-op.
    pub fn extend_epochs(&mut self, epochs: u64) {
        self.config.epochs = self.config.epochs.max(epochs);
    }

    pub fn optimizer(&self) -> &Adam {
        &self.optimizer
    }

    /// Completed passes over all domains.
    pub fn global_step(&self) -> u64 {
        self.global_step
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Best mean validation AUC seen so far (−∞ before any validation).
    pub fn best_metric(&self) -> f64 {
        self.best_metric
    }

    /// Running hash of every (domain, batch indices) pair consumed so far.
    /// Two trainers that drew identical batch sequences agree on this.
    pub fn batch_audit(&self) -> u64 {
        self.audit.finish()
    }

    /// Initializes each uninitialized domain's bank vector from one
    /// gradient-free pass over its first `min(batch_size, n)` training
    /// samples in natural order. Already-initialized domains are left
    /// alone, so resumed runs do not re-seed the bank.
    pub fn warm_up(&mut self, data: &DomainDataset) -> Result<()> {
        let Some(bank) = self.model.bank() else {
            return Ok(());
        };
        let pending: Vec<usize> =
            (0..data.num_domains()).filter(|&d| !bank.is_initialized(d)).collect();
        for d in pending {
            let samples = data.split(d, Split::Train)?;
            let take = self.config.batch_size.min(samples.len());
            let idx: Vec<usize> = (0..take).collect();
            let batch = Batch::assemble(samples, &idx)?;
            self.model.warm_up(&batch)?;
            log::debug!("warm-up: initialized domain {d} from {take} samples");
        }
        Ok(())
    }

    /// Extends a forward tape with the training loss: mean cross-entropy
    /// plus `l2 ·Σ‖W‖²` over the weight matrices this step updates (the
    /// shared group and domain `d`'s group). With `l2 = 0` the penalty
    /// terms are omitted entirely.
    fn build_loss(&self, fwd: &mut Forward, labels: &[f64], d: usize) -> Result<NodeId> {
        let mut loss = fwd.graph.bce_mean(fwd.yhat, labels)?;
        let lambda = self.config.l2;
        if lambda > 0.0 {
            for name in self.shared_names.iter().chain(&self.domain_names[d]) {
                let param = self.model.params.get(name)?;
                if !param.is_weight {
                    continue;
                }
                let leaf = fwd.graph.param(name, param.value.clone());
                let sq = fwd.graph.square_sum(leaf);
                let penalty = fwd.graph.scale(sq, lambda);
                loss = fwd.graph.add(loss, penalty)?;
            }
        }
        Ok(loss)
    }

    /// One optimizer step on one domain: draw a batch from its cycler,
    /// differentiate the regularized loss, update the shared parameters at
    /// `learning_rate / num_domains` and the domain's own parameters at
    /// `learning_rate`, then fold the batch's tower output into the bank.
    pub fn train_step_domain(&mut self, data: &DomainDataset, d: usize) -> Result<StepReport> {
        let samples = data.split(d, Split::Train)?;
        let idx = self.cyclers[d].next_batch(self.config.batch_size)?;
        self.audit.update(&(d as u64).to_le_bytes());
        self.audit.update(&index_hash(&idx).to_le_bytes());
        let batch = Batch::assemble(samples, &idx)?;

        let mut fwd = self.model.forward(&batch, true, &mut self.dropout_rng)?;
        let loss = self.build_loss(&mut fwd, &batch.labels, d)?;
        let loss_val = fwd.graph.value(loss).item();
        if !loss_val.is_finite() {
            return Err(Error::Numeric(format!(
                "loss became {loss_val} on domain {d} at global step {}",
                self.global_step
            )));
        }
        let grads = compute_gradients(&fwd.graph, loss, &self.model.params)?;

        let shared_lr = self.config.learning_rate / self.model.config().num_domains as f64;
        let domain_lr = self.config.learning_rate;
        self.optimizer.step(&mut self.model.params, &grads, &self.shared_names, shared_lr)?;
        self.optimizer.step(&mut self.model.params, &grads, &self.domain_names[d], domain_lr)?;

        if let Some(u) = &fwd.pooled_u {
            self.model.dfe_update(d, u)?;
        }
        Ok(StepReport {
            domain: d,
            loss: loss_val,
            batch_size: batch.len(),
            shared_lr,
            domain_lr,
            shared_grad_norm: grad_norm(&grads, &self.shared_names),
            domain_grad_norm: grad_norm(&grads, &self.domain_names[d]),
        })
    }

    /// Runs the training loop until the epoch cap or early stopping.
    ///
    /// Each epoch makes `steps_per_epoch` passes; each pass steps every
    /// domain once in index order. After each epoch the model is scored on
    /// the validation split; when the mean AUC fails to improve for more
    /// than `patience` consecutive epochs, training stops. On return the
    /// model holds the best epoch's parameters and bank (later epochs are
    /// discarded), and if `out_dir` is given the best epoch's full trainer
    /// state is also on disk as `checkpoint.bin`.
    pub fn fit(&mut self, data: &DomainDataset, out_dir: Option<&Path>) -> Result<FitReport> {
        self.warm_up(data)?;
        let d_count = data.num_domains();
        let max_train = data.counts().iter().map(|c| c.0).max().unwrap_or(0);
        let steps = steps_per_epoch(max_train, self.config.batch_size);
        const CHECKPOINT_FILE: &str = "checkpoint.bin";
        let checkpoint_path = out_dir.map(|dir| dir.join(CHECKPOINT_FILE));

        let mut epochs = Vec::new();
        let mut best_epoch = self.epoch;
        let mut best_state: Option<(crate::params::ParamStore, Option<DomainFeatureBank>)> = None;
        let mut non_improving = 0u64;
        let mut stopped_early = false;

        while self.epoch < self.config.epochs {
            self.epoch += 1;
            let mut loss_sums = vec![0.0; d_count];
            for _ in 0..steps {
                self.global_step += 1;
                for d in 0..d_count {
                    let report = self.train_step_domain(data, d)?;
                    loss_sums[d] += report.loss;
                }
            }
            let domain_loss: Vec<f64> = loss_sums.iter().map(|s| s / steps as f64).collect();

            let val = evaluate_all(&self.model, data, Split::Validation)?;
            let improved = val.avg_auc > self.best_metric;
            if improved {
                self.best_metric = val.avg_auc;
                best_epoch = self.epoch;
                non_improving = 0;
                best_state = Some((self.model.params.clone(), self.model.bank().cloned()));
                if let Some(path) = &checkpoint_path {
                    checkpoint::save(self, &data.schema, path)?;
                }
            } else {
                non_improving += 1;
            }
            log::info!(
                "epoch {}: mean val AUC {:.4}{}",
                self.epoch,
                val.avg_auc,
                if improved { " (best)" } else { "" }
            );
            epochs.push(EpochRecord {
                epoch: self.epoch,
                domain_loss,
                domain_val_auc: val.domain_auc,
                avg_val_auc: val.avg_auc,
                improved,
            });
            if non_improving >= self.config.patience.max(1) {
                stopped_early = true;
                break;
            }
        }

        if let Some((params, bank)) = best_state {
            self.model.params = params;
            if let Some(b) = bank {
                self.model.set_bank(b)?;
            }
        }
        Ok(FitReport {
            steps_per_epoch: steps,
            epochs,
            best_epoch,
            best_avg_val_auc: self.best_metric,
            stopped_early,
            checkpoint_file: checkpoint_path.map(|_| CHECKPOINT_FILE.to_string()),
        })
    }

    /// Writes the complete training state — parameters, optimizer moments,
    /// bank, cycler and RNG positions — plus the dataset schema it was
    /// fitted against.
    pub fn save_checkpoint(&self, path: &Path, schema: &crate::data::DatasetSchema) -> Result<()> {
        checkpoint::save(self, schema, path)
    }

    /// Rebuilds a trainer from a checkpoint, verifying that `data` matches
    /// the schema the checkpoint was trained on.
    pub fn resume(path: &Path, data: &DomainDataset) -> Result<Trainer> {
        checkpoint::load(path, data)
    }
}

fn grad_norm(grads: &Gradients, names: &[String]) -> f64 {
    names
        .iter()
        .filter_map(|n| grads.get(n))
        .map(|g| g.data().iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}
