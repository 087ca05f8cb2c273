//! Evaluation: AUC, per-domain reports, paired significance tests over
//! seeds, ablation and decay-sweep orchestration, and export of the learned
//! domain-feature vectors.

use std::path::Path;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::{Batch, DomainDataset, Fnv, Split};
use crate::error::{Error, Result};
use crate::model::{DfeiModel, ModelConfig, Variant};
use crate::train::{TrainConfig, Trainer};

/// Batch size used for evaluation-mode forward passes.
const EVAL_CHUNK: usize = 512;

/// Area under the ROC curve via the rank-sum identity, with average ranks
/// over tied scores: (rank sum of positives − P(P+1)/2) / (P·N).
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Argument(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::Argument("AUC of an empty sample".into()));
    }
    if let Some(bad) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(Error::Argument(format!("label {bad} is not binary")));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("non-finite score in AUC input".into()));
    }
    let p = labels.iter().filter(|&&y| y == 1.0).count();
    let n = scores.len() - p;
    if p == 0 || n == 0 {
        return Err(Error::Data(format!(
            "AUC undefined: sample has {p} positives and {n} negatives"
        )));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut positive_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 share their average.
        let avg_rank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] == 1.0 {
                positive_rank_sum += avg_rank;
            }
        }
        i = j + 1;
    }
    Ok((positive_rank_sum - (p * (p + 1)) as f64 / 2.0) / (p as f64 * n as f64))
}

/// Unweighted mean over the domains whose AUC is defined.
pub fn average_of(domain_auc: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = domain_auc.iter().flatten().copied().collect();
    if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

/// Per-domain and averaged AUC of one model over one split.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub variant: String,
    /// Seed of the run being evaluated; filled by the caller (evaluation
    /// itself is deterministic and seed-free).
    pub seed: u64,
    pub split: String,
    pub domain_auc: Vec<Option<f64>>,
    pub avg_auc: f64,
    pub sample_counts: Vec<usize>,
    /// Domains whose AUC was undefined (empty split or one class).
    pub skipped_domains: Vec<usize>,
}

/// Evaluation-mode scores and labels for one domain's split, in chunks.
pub fn predict_split(
    model: &DfeiModel,
    data: &DomainDataset,
    d: usize,
    split: Split,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let samples = data.split(d, split)?;
    let mut scores = Vec::with_capacity(samples.len());
    let mut start = 0;
    while start < samples.len() {
        let end = (start + EVAL_CHUNK).min(samples.len());
        let idx: Vec<usize> = (start..end).collect();
        let batch = Batch::assemble(samples, &idx)?;
        scores.extend(model.predict(&batch)?);
        start = end;
    }
    Ok((scores, samples.iter().map(|s| s.label).collect()))
}

/// Evaluates every domain on `split` and averages the defined AUCs.
/// Domains with an empty split or a single label class are skipped with a
/// warning; if no domain is usable the evaluation fails.
pub fn evaluate_all(model: &DfeiModel, data: &DomainDataset, split: Split) -> Result<EvalReport> {
    let d_count = data.num_domains();
    let mut domain_auc = vec![None; d_count];
    let mut counts = vec![0usize; d_count];
    let mut skipped = Vec::new();
    for d in 0..d_count {
        let (scores, labels) = predict_split(model, data, d, split)?;
        counts[d] = labels.len();
        if labels.is_empty() {
            log::warn!("domain {d}: no {split} samples; skipping its AUC");
            skipped.push(d);
            continue;
        }
        match auc(&scores, &labels) {
            Ok(a) => domain_auc[d] = Some(a),
            Err(Error::Data(msg)) => {
                log::warn!("domain {d}: {msg}; skipping its AUC");
                skipped.push(d);
            }
            Err(e) => return Err(e),
        }
    }
    let avg = average_of(&domain_auc).ok_or_else(|| {
        Error::Data(format!("no domain has a usable {split} split; every AUC is undefined"))
    })?;
    Ok(EvalReport {
        variant: model.config().variant.to_string(),
        seed: 0,
        split: split.to_string(),
        domain_auc,
        avg_auc: avg,
        sample_counts: counts,
        skipped_domains: skipped,
    })
}

/// A paired t-test result. `degenerate` marks a zero-variance difference
/// with nonzero mean, where t is infinite and p collapses to 0.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub degenerate: bool,
    pub dof: u64,
}

/// Classical paired t-test on `a[i] − b[i]`, two-sided p-value from the t
/// distribution with n−1 degrees of freedom.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::Argument(format!("paired samples differ: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::Argument("paired t-test needs at least 2 pairs".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::Numeric("non-finite difference in t-test input".into()));
    }
    let n = diffs.len() as f64;
    let dof = diffs.len() as u64 - 1;
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);

    if var == 0.0 {
        return Ok(if mean == 0.0 {
            TTest { t: 0.0, p: 1.0, degenerate: false, dof }
        } else {
            TTest { t: f64::INFINITY.copysign(mean), p: 0.0, degenerate: true, dof }
        });
    }
    let t = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, dof as f64)
        .map_err(|e| Error::Numeric(format!("t distribution with {dof} dof: {e}")))?;
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok(TTest { t, p, degenerate: false, dof })
}

// ---------------------------------------------------------------------------
// Domain-feature export
// ---------------------------------------------------------------------------

fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Numeric("cosine similarity of a zero vector".into()));
    }
    Ok(dot / (na * nb))
}

/// Pairwise cosine similarities of the bank vectors, row-major D×D.
pub fn bank_cosine_matrix(model: &DfeiModel) -> Result<Vec<Vec<f64>>> {
    let bank = model
        .bank()
        .ok_or_else(|| Error::State("this model variant maintains no domain-feature bank".into()))?;
    let d_count = bank.num_domains();
    let mut rows = Vec::with_capacity(d_count);
    for i in 0..d_count {
        let vi = bank.vector(i)?;
        let mut row = Vec::with_capacity(d_count);
        for j in 0..d_count {
            row.push(cosine(vi, bank.vector(j)?)?);
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Writes the learned domain vectors and their cosine-similarity matrix as
/// two CSVs — the inputs for external projection/plotting tools.
///
/// `train_ctrs[d]` is domain d's training click-through rate, carried along
/// so plots can be colored by label prevalence.
pub fn export_domain_features(
    model: &DfeiModel,
    train_ctrs: &[f64],
    features_path: &Path,
    similarity_path: &Path,
) -> Result<()> {
    let bank = model
        .bank()
        .ok_or_else(|| Error::State("this model variant maintains no domain-feature bank".into()))?;
    let d_count = bank.num_domains();
    if train_ctrs.len() != d_count {
        return Err(Error::Argument(format!(
            "{} CTR entries for {d_count} domains",
            train_ctrs.len()
        )));
    }

    let mut w = csv::Writer::from_path(features_path)
        .map_err(|e| Error::io(format!("cannot create {}: {e}", features_path.display())))?;
    let mut header = vec!["domain".to_string(), "train_ctr".to_string()];
    header.extend((0..bank.dim()).map(|i| format!("v{i}")));
    w.write_record(&header).map_err(|e| Error::io(format!("csv write: {e}")))?;
    for d in 0..d_count {
        let mut rec = vec![d.to_string(), format!("{:.6}", train_ctrs[d])];
        rec.extend(bank.vector(d)?.iter().map(|x| format!("{x:.17e}")));
        w.write_record(&rec).map_err(|e| Error::io(format!("csv write: {e}")))?;
    }
    w.flush().map_err(|e| Error::io(format!("csv write: {e}")))?;

    let matrix = bank_cosine_matrix(model)?;
    let mut w = csv::Writer::from_path(similarity_path)
        .map_err(|e| Error::io(format!("cannot create {}: {e}", similarity_path.display())))?;
    let mut header = vec!["domain".to_string()];
    header.extend((0..d_count).map(|j| format!("d{j}")));
    w.write_record(&header).map_err(|e| Error::io(format!("csv write: {e}")))?;
    for (d, row) in matrix.iter().enumerate() {
        let mut rec = vec![d.to_string()];
        rec.extend(row.iter().map(|x| format!("{x:.17e}")));
        w.write_record(&rec).map_err(|e| Error::io(format!("csv write: {e}")))?;
    }
    w.flush().map_err(|e| Error::io(format!("csv write: {e}")))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Ablation
// ---------------------------------------------------------------------------

/// One trained-and-evaluated run inside an ablation or sweep.
#[derive(Debug, Clone, Serialize)]
pub struct AblationCell {
    pub variant: String,
    pub seed: u64,
    pub domain_auc: Vec<Option<f64>>,
    pub avg_auc: f64,
    /// Hash of the training batch-index sequence; equal hashes across
    /// variants certify they consumed identical batches.
    pub batch_audit: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct VariantMean {
    pub variant: String,
    pub mean_avg_auc: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VariantTest {
    pub variant: String,
    #[serde(flatten)]
    pub test: TTest,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub cells: Vec<AblationCell>,
    pub mean_avg_auc: Vec<VariantMean>,
    /// Paired t-tests of the full model's per-seed average AUC against
    /// each reduced variant's.
    pub full_vs: Vec<VariantTest>,
    pub batch_audit_consistent: bool,
}

fn train_and_evaluate(
    data: &DomainDataset,
    base_model: &ModelConfig,
    base_train: &TrainConfig,
    variant: Variant,
    seed: u64,
    split: Split,
) -> Result<(AblationCell, Trainer)> {
    let mut mc = base_model.clone();
    mc.variant = variant;
    let mut tc = base_train.clone();
    tc.seed = seed;
    // Run the full epoch budget: early stopping would let variants consume
    // different-length prefixes of the shared batch stream, breaking the
    // audit. `fit` still keeps each variant's best epoch.
    tc.patience = tc.epochs;
    let model = DfeiModel::new(mc, seed)?;
    let mut trainer = Trainer::new(model, tc, data)?;
    trainer.fit(data, None)?;
    let report = evaluate_all(&trainer.model, data, split)?;
    Ok((
        AblationCell {
            variant: variant.to_string(),
            seed,
            domain_auc: report.domain_auc,
            avg_auc: report.avg_auc,
            batch_audit: format!("{:016x}", trainer.batch_audit()),
        },
        trainer,
    ))
}

/// Trains every variant under identical data, seeds, and batch sequences,
/// evaluates on the test split, and compares reduced variants against the
/// full model with paired t-tests over seeds.
pub fn run_ablation(
    data: &DomainDataset,
    base_model: &ModelConfig,
    base_train: &TrainConfig,
    seeds: &[u64],
) -> Result<AblationReport> {
    if seeds.len() < 2 {
        return Err(Error::Argument("ablation needs at least 2 seeds for the t-tests".into()));
    }
    let mut cells = Vec::new();
    let mut per_variant: Vec<(Variant, Vec<f64>)> = Vec::new();
    for variant in Variant::ALL {
        let mut avg_by_seed = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let (cell, _) =
                train_and_evaluate(data, base_model, base_train, variant, seed, Split::Test)?;
            log::info!(
                "ablation {variant} seed {seed}: test avg AUC {:.4}",
                cell.avg_auc
            );
            avg_by_seed.push(cell.avg_auc);
            cells.push(cell);
        }
        per_variant.push((variant, avg_by_seed));
    }

    // Per seed, every variant must have consumed the same batch sequence.
    let consistent = seeds.iter().enumerate().all(|(i, _)| {
        let audits: Vec<&str> = cells
            .iter()
            .skip(i)
            .step_by(seeds.len())
            .map(|c| c.batch_audit.as_str())
            .collect();
        // single_mlp draws the same batches; audits differ only if cycling
        // or ordering diverged between variants.
        audits.windows(2).all(|w| w[0] == w[1])
    });

    let full_avgs = per_variant[0].1.clone();
    let mut full_vs = Vec::new();
    for (variant, avgs) in per_variant.iter().skip(1) {
        full_vs.push(VariantTest {
            variant: variant.to_string(),
            test: paired_t_test(&full_avgs, avgs)?,
        });
    }
    let mean_avg_auc = per_variant
        .iter()
        .map(|(v, avgs)| VariantMean {
            variant: v.to_string(),
            mean_avg_auc: avgs.iter().sum::<f64>() / avgs.len() as f64,
        })
        .collect();
    Ok(AblationReport {
        seeds: seeds.to_vec(),
        cells,
        mean_avg_auc,
        full_vs,
        batch_audit_consistent: consistent,
    })
}

// ---------------------------------------------------------------------------
// Decay sweep
// ---------------------------------------------------------------------------

/// The published sweep grid for the bank's EMA decay.
pub const DEFAULT_ALPHA_GRID: [f64; 7] = [0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0];

#[derive(Debug, Clone, Serialize)]
pub struct AlphaCell {
    pub alpha: f64,
    pub seed: u64,
    pub avg_auc: f64,
    /// True when the bank never moved after warm-up (expected exactly at
    /// decay 1, where the EMA ignores all later batches).
    pub bank_frozen_after_warm_up: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AlphaMean {
    pub alpha: f64,
    pub mean_avg_auc: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AlphaReport {
    pub seeds: Vec<u64>,
    pub cells: Vec<AlphaCell>,
    pub mean_by_alpha: Vec<AlphaMean>,
}

/// Trains one model per (decay, seed) and reports test average AUC.
pub fn alpha_sweep(
    data: &DomainDataset,
    base_model: &ModelConfig,
    base_train: &TrainConfig,
    alphas: &[f64],
    seeds: &[u64],
) -> Result<AlphaReport> {
    if alphas.is_empty() || seeds.is_empty() {
        return Err(Error::Argument("sweep needs at least one decay value and one seed".into()));
    }
    if let Some(a) = alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::Argument(format!("decay {a} outside [0, 1]")));
    }
    let mut cells = Vec::new();
    let mut mean_by_alpha = Vec::new();
    for &alpha in alphas {
        let mut sum = 0.0;
        for &seed in seeds {
            let mut mc = base_model.clone();
            mc.decay = alpha;
            let mut tc = base_train.clone();
            tc.seed = seed;
            let model = DfeiModel::new(mc, seed)?;
            let mut trainer = Trainer::new(model, tc, data)?;
            trainer.warm_up(data)?;
            let warmed: Vec<Vec<f64>> = match trainer.model.bank() {
                Some(b) => (0..b.num_domains()).map(|d| b.vector(d).unwrap().to_vec()).collect(),
                None => Vec::new(),
            };
            trainer.fit(data, None)?;
            let frozen = match trainer.model.bank() {
                Some(b) => (0..b.num_domains()).all(|d| b.vector(d).unwrap() == warmed[d]),
                None => false,
            };
            let report = evaluate_all(&trainer.model, data, Split::Test)?;
            log::info!("decay {alpha} seed {seed}: test avg AUC {:.4}", report.avg_auc);
            sum += report.avg_auc;
            cells.push(AlphaCell {
                alpha,
                seed,
                avg_auc: report.avg_auc,
                bank_frozen_after_warm_up: frozen,
            });
        }
        mean_by_alpha.push(AlphaMean { alpha, mean_avg_auc: sum / seeds.len() as f64 });
    }
    Ok(AlphaReport { seeds: seeds.to_vec(), cells, mean_by_alpha })
}

/// Order-insensitive fingerprint of a report's JSON rendering; used by
/// manifests to certify outputs.
pub fn json_fingerprint(value: &impl Serialize) -> Result<u64> {
    let bytes = serde_json::to_vec(value)
        .map_err(|e| Error::io(format!("serializing report: {e}")))?;
    let mut h = Fnv::new();
    h.update(&bytes);
    Ok(h.finish())
}
