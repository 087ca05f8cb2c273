//! Datasets: schema-driven CSV ingestion, deterministic splits, a synthetic
//! multi-domain benchmark generator, and shuffled batch cycling.
//!
//! A dataset is a set of *domains*, each holding train/validation/test
//! sample vectors. Categorical features are encoded through per-field
//! vocabularies fitted on the training split only; values unseen at fit
//! time map to a reserved out-of-vocabulary id. All randomness (splits,
//! shuffles, generation) is keyed by explicit seeds, so identical inputs
//! give byte-identical datasets.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::sigmoid_scalar;
use crate::rng;

/// One impression: a domain index, `F` encoded feature ids, a binary label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub domain: usize,
    pub features: Vec<u32>,
    pub label: f64,
}

/// The three dataset partitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Argument(format!(
                "unknown split {other:?}; expected train, validation, or test"
            ))),
        }
    }
}

/// How raw rows are assigned to splits.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SplitRule {
    /// Hash a key column (all rows of one key land in one split), 8:1:1.
    ByKey { key_field: String, seed: u64 },
    /// Read the split name from a column containing
    /// `train`/`validation`/`test`.
    ByColumn { split_field: String },
    /// Assign by inclusive string-ordered ranges over a date column
    /// (works for ISO dates and fixed-width numeric dates). Rows outside
    /// every range are dropped.
    ByDate {
        date_field: String,
        train: [String; 2],
        validation: [String; 2],
        test: [String; 2],
    },
}

/// Declares how a CSV file maps onto samples.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SchemaSpec {
    pub feature_fields: Vec<String>,
    pub domain_field: String,
    pub label_field: String,
    #[serde(default)]
    pub delimiter: Option<char>,
    pub split: SplitRule,
}

/// Fitted encoding: per-field vocabularies plus the domain index map, all
/// frozen after fitting on the training split.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetSchema {
    pub feature_fields: Vec<String>,
    pub domain_field: String,
    pub label_field: String,
    /// Per-field value → id. The out-of-vocabulary id of field `f` is
    /// `vocabs[f].len()`, so embedding tables need `len + 1` rows.
    pub vocabs: Vec<IndexMap<String, u32>>,
    /// Raw domain value → domain index.
    pub domains: IndexMap<String, usize>,
}

impl DatasetSchema {
    pub fn num_fields(&self) -> usize {
        self.feature_fields.len()
    }

    pub fn num_domains(&self) -> usize {
        self.domains.len()
    }

    /// Vocabulary sizes excluding the OOV bucket.
    pub fn vocab_sizes(&self) -> Vec<usize> {
        self.vocabs.iter().map(|v| v.len()).collect()
    }

    /// Encodes one raw value for field `f`; unseen values get the OOV id.
    pub fn encode(&self, f: usize, value: &str) -> u32 {
        self.vocabs[f].get(value).copied().unwrap_or(self.vocabs[f].len() as u32)
    }

    /// A stable fingerprint of the fitted encoding, used to verify that a
    /// checkpoint and a dataset agree.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::new();
        for name in &self.feature_fields {
            h.update(name.as_bytes());
            h.update(&[0xff]);
        }
        for vocab in &self.vocabs {
            for (value, id) in vocab {
                h.update(value.as_bytes());
                h.update(&id.to_le_bytes());
            }
            h.update(&[0xfe]);
        }
        for (value, id) in &self.domains {
            h.update(value.as_bytes());
            h.update(&id.to_le_bytes());
        }
        h.finish()
    }
}

/// One domain's samples across the three splits.
#[derive(Debug, Clone)]
pub struct DomainSplits {
    /// The raw domain value this index was assigned from.
    pub name: String,
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl DomainSplits {
    pub fn split(&self, s: Split) -> &[Sample] {
        match s {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }
}

/// A fitted, encoded multi-domain dataset.
#[derive(Debug, Clone)]
pub struct DomainDataset {
    pub schema: DatasetSchema,
    pub domains: Vec<DomainSplits>,
}

impl DomainDataset {
    pub fn num_domains(&self) -> usize {
        self.domains.len()
    }

    pub fn split(&self, d: usize, s: Split) -> Result<&[Sample]> {
        self.domains
            .get(d)
            .map(|ds| ds.split(s))
            .ok_or_else(|| Error::Argument(format!("domain index {d} out of range")))
    }

    /// (train, validation, test) sizes per domain.
    pub fn counts(&self) -> Vec<(usize, usize, usize)> {
        self.domains
            .iter()
            .map(|d| (d.train.len(), d.validation.len(), d.test.len()))
            .collect()
    }

    /// Fraction of positive labels in a domain's training split.
    pub fn train_ctr(&self, d: usize) -> Result<f64> {
        let rows = self.split(d, Split::Train)?;
        if rows.is_empty() {
            return Err(Error::Data(format!("domain {d} has no training samples")));
        }
        Ok(rows.iter().map(|s| s.label).sum::<f64>() / rows.len() as f64)
    }

    /// (domain, split) pairs with zero samples. Training-split absences are
    /// rejected at construction, so these are validation/test gaps.
    pub fn missing_splits(&self) -> Vec<(usize, Split)> {
        let mut out = Vec::new();
        for (d, ds) in self.domains.iter().enumerate() {
            for s in Split::ALL {
                if ds.split(s).is_empty() {
                    out.push((d, s));
                }
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Hashing and key splits
// ---------------------------------------------------------------------------

/// Incremental FNV-1a (64-bit): stable across platforms and runs, used for
/// split assignment, batch-sequence audits, and manifest checksums.
#[derive(Debug, Clone, Copy)]
pub struct Fnv(u64);

impl Fnv {
    pub fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    pub fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x100_0000_01b3);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }

    /// Continues hashing from a previously `finish`ed state — FNV-1a's
    /// running state is its digest, so checkpoints can persist it.
    pub fn resume(state: u64) -> Self {
        Fnv(state)
    }
}

impl Default for Fnv {
    fn default() -> Self {
        Self::new()
    }
}

/// FNV-1a of one byte slice.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = Fnv::new();
    h.update(bytes);
    h.finish()
}

/// Deterministic 8:1:1 split assignment: the key and seed are hashed
/// together, the bucket is the hash mod 10 (0–7 train, 8 validation,
/// 9 test). Every row with the same key lands in the same split.
pub fn split_by_key(key: &str, seed: u64) -> Split {
    let mut h = Fnv::new();
    h.update(key.as_bytes());
    h.update(&seed.to_le_bytes());
    match h.finish() % 10 {
        0..=7 => Split::Train,
        8 => Split::Validation,
        _ => Split::Test,
    }
}

// ---------------------------------------------------------------------------
// Row intake shared by the CSV loader and the generator
// ---------------------------------------------------------------------------

/// A decoded but not yet vocabulary-encoded row.
#[derive(Debug, Clone)]
pub(crate) struct RawRow {
    pub features: Vec<String>,
    pub domain: String,
    pub label: f64,
    pub split: Split,
}

/// Sorts values numerically when every value parses as an integer, else
/// lexicographically, so ids are independent of row order.
fn sorted_values(values: impl Iterator<Item = String>) -> Vec<String> {
    let mut vals: Vec<String> = values.collect();
    let numeric: Option<Vec<i64>> = vals.iter().map(|v| v.parse::<i64>().ok()).collect();
    match numeric {
        Some(mut nums) => {
            nums.sort_unstable();
            nums.dedup();
            nums.into_iter().map(|n| n.to_string()).collect()
        }
        None => {
            vals.sort_unstable();
            vals.dedup();
            vals
        }
    }
}

/// Fits vocabularies on the training rows and encodes everything.
pub(crate) fn build_dataset(
    rows: Vec<RawRow>,
    feature_fields: Vec<String>,
    domain_field: String,
    label_field: String,
) -> Result<DomainDataset> {
    if rows.is_empty() {
        return Err(Error::Data("dataset has no rows".to_string()));
    }
    let f_count = feature_fields.len();

    // Vocabularies and the domain map come from training rows only.
    let mut vocabs = Vec::with_capacity(f_count);
    for f in 0..f_count {
        let values = sorted_values(
            rows.iter()
                .filter(|r| r.split == Split::Train)
                .map(|r| r.features[f].clone()),
        );
        let vocab: IndexMap<String, u32> =
            values.into_iter().enumerate().map(|(i, v)| (v, i as u32)).collect();
        vocabs.push(vocab);
    }
    let domain_values = sorted_values(
        rows.iter().filter(|r| r.split == Split::Train).map(|r| r.domain.clone()),
    );
    if domain_values.is_empty() {
        return Err(Error::Data("training split is empty; cannot fit a schema".to_string()));
    }
    let domains: IndexMap<String, usize> =
        domain_values.into_iter().enumerate().map(|(i, v)| (v, i)).collect();

    let schema = DatasetSchema {
        feature_fields,
        domain_field,
        label_field,
        vocabs,
        domains,
    };

    let mut splits: Vec<DomainSplits> = schema
        .domains
        .keys()
        .map(|name| DomainSplits {
            name: name.clone(),
            train: Vec::new(),
            validation: Vec::new(),
            test: Vec::new(),
        })
        .collect();

    for row in &rows {
        let Some(&d) = schema.domains.get(&row.domain) else {
            return Err(Error::Data(format!(
                "domain {:?} appears in the {} split but never in training; \
                 a domain without training data cannot be modeled",
                row.domain, row.split
            )));
        };
        let features: Vec<u32> =
            (0..f_count).map(|f| schema.encode(f, &row.features[f])).collect();
        let sample = Sample { domain: d, features, label: row.label };
        match row.split {
            Split::Train => splits[d].train.push(sample),
            Split::Validation => splits[d].validation.push(sample),
            Split::Test => splits[d].test.push(sample),
        }
    }

    let ds = DomainDataset { schema, domains: splits };
    for (d, s) in ds.missing_splits() {
        log::warn!("domain {d} ({}) has no {s} samples", ds.domains[d].name);
    }
    Ok(ds)
}

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

/// Loads a delimited file with a header row, assigns splits per the schema
/// spec's rule, fits vocabularies on the training rows, and encodes all
/// rows into a [`DomainDataset`].
pub fn load_csv(path: &Path, spec: &SchemaSpec) -> Result<DomainDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(spec.delimiter.unwrap_or(',') as u8)
        .from_path(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;

    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("cannot read header of {}: {e}", path.display())))?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::Data(format!("column {name:?} not found in {}", path.display()))
        })
    };

    let feature_cols: Vec<usize> =
        spec.feature_fields.iter().map(|f| col(f)).collect::<Result<_>>()?;
    let domain_col = col(&spec.domain_field)?;
    let label_col = col(&spec.label_field)?;
    let rule_col = match &spec.split {
        SplitRule::ByKey { key_field, .. } => Some(col(key_field)?),
        SplitRule::ByColumn { split_field } => Some(col(split_field)?),
        SplitRule::ByDate { date_field, .. } => Some(col(date_field)?),
    };

    let mut rows = Vec::new();
    for record in reader.records() {
        let record =
            record.map_err(|e| Error::Data(format!("{}: malformed row: {e}", path.display())))?;
        let line = record.position().map_or(0, |p| p.line());
        let cell = |idx: usize| -> Result<&str> {
            record.get(idx).ok_or_else(|| {
                Error::Data(format!("{}:{line}: row has too few columns", path.display()))
            })
        };

        let label_raw = cell(label_col)?;
        let label: f64 = label_raw.trim().parse().map_err(|_| {
            Error::Data(format!("{}:{line}: label {label_raw:?} is not a number", path.display()))
        })?;
        if label != 0.0 && label != 1.0 {
            return Err(Error::Data(format!(
                "{}:{line}: label {label_raw:?} is not binary",
                path.display()
            )));
        }

        let split = match &spec.split {
            SplitRule::ByKey { seed, .. } => {
                Some(split_by_key(cell(rule_col.unwrap())?, *seed))
            }
            SplitRule::ByColumn { .. } => {
                let v = cell(rule_col.unwrap())?;
                Some(v.parse::<Split>().map_err(|_| {
                    Error::Data(format!(
                        "{}:{line}: split value {v:?} is not train/validation/test",
                        path.display()
                    ))
                })?)
            }
            SplitRule::ByDate { train, validation, test, .. } => {
                let v = cell(rule_col.unwrap())?;
                let within =
                    |range: &[String; 2]| v >= range[0].as_str() && v <= range[1].as_str();
                // Validation is checked before train so that a validation
                // window carved out of the training date range wins.
                if within(validation) {
                    Some(Split::Validation)
                } else if within(train) {
                    Some(Split::Train)
                } else if within(test) {
                    Some(Split::Test)
                } else {
                    None // outside every window: dropped
                }
            }
        };
        let Some(split) = split else { continue };

        let features: Result<Vec<String>> =
            feature_cols.iter().map(|&c| cell(c).map(str::to_string)).collect();
        rows.push(RawRow {
            features: features?,
            domain: cell(domain_col)?.to_string(),
            label,
            split,
        });
    }

    build_dataset(
        rows,
        spec.feature_fields.clone(),
        spec.domain_field.clone(),
        spec.label_field.clone(),
    )
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

/// Parameters of the synthetic multi-domain benchmark.
///
/// The generative process: users and items carry latent normal vectors of
/// dimension `latent_dim`; domain `d` scores a (user, item) pair with a
/// bilinear form through `W_shared + signal_strength · W_group(d)`; labels
/// are Bernoulli draws of the sigmoid of the scaled score plus a per-domain
/// bias calibrated by bisection so each domain's training CTR hits its
/// target. Exposed features are the user id, the item id, and
/// `fields − 2` context ids hashed from the pair, so a model must recover
/// the latent structure from ids alone.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub domains: usize,
    pub users: usize,
    pub items: usize,
    /// Total feature fields: user, item, and `fields − 2` context hashes.
    pub fields: usize,
    pub samples_per_domain: Vec<usize>,
    pub target_ctrs: Vec<f64>,
    /// Magnitude of the domain-specific weight component; 0 makes all
    /// label functions identical up to bias.
    pub signal_strength: f64,
    /// Domains in the same group share one label function. Defaults to
    /// big/small pairs (domain d grouped with d+3), giving each small
    /// domain a data-rich same-function partner to transfer from.
    pub domain_groups: Option<Vec<usize>>,
    pub context_vocab: usize,
    pub latent_dim: usize,
    /// Multiplier on the bilinear score before the sigmoid; larger values
    /// spread the logits and raise the attainable AUC.
    pub score_scale: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    /// The benchmark defaults: six domains with a 5:1 traffic spread and
    /// CTR targets from 2% to 12%, over an id space dense enough to learn
    /// (each user averages ~250 impressions, each item ~375). Domains are
    /// paired big-with-small so transfer across same-function domains has
    /// room to show up.
    fn default() -> Self {
        Self {
            domains: 6,
            users: 600,
            items: 400,
            fields: 6,
            samples_per_domain: vec![50_000, 35_000, 25_000, 18_000, 12_000, 10_000],
            target_ctrs: vec![0.02, 0.04, 0.06, 0.08, 0.10, 0.12],
            signal_strength: 0.7,
            domain_groups: Some(vec![0, 1, 2, 0, 1, 2]),
            context_vocab: 50,
            latent_dim: 4,
            score_scale: 3.0,
            seed: 17,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.domains < 2 {
            return Err(Error::Config(format!(
                "synthetic spec needs at least 2 domains, got {}",
                self.domains
            )));
        }
        if self.fields < 2 {
            return Err(Error::Config("synthetic spec needs at least 2 fields (user, item)".into()));
        }
        if self.samples_per_domain.len() != self.domains {
            return Err(Error::Config(format!(
                "samples_per_domain has {} entries for {} domains",
                self.samples_per_domain.len(),
                self.domains
            )));
        }
        if self.target_ctrs.len() != self.domains {
            return Err(Error::Config(format!(
                "target_ctrs has {} entries for {} domains",
                self.target_ctrs.len(),
                self.domains
            )));
        }
        if let Some(bad) = self.target_ctrs.iter().find(|c| !(0.0 < **c && **c < 1.0)) {
            return Err(Error::Config(format!("target CTR {bad} outside (0, 1)")));
        }
        if let Some(groups) = &self.domain_groups {
            if groups.len() != self.domains {
                return Err(Error::Config(format!(
                    "domain_groups has {} entries for {} domains",
                    groups.len(),
                    self.domains
                )));
            }
        }
        if self.users == 0 || self.items == 0 || self.latent_dim == 0 || self.context_vocab == 0 {
            return Err(Error::Config("users, items, latent_dim, context_vocab must be positive".into()));
        }
        if self.samples_per_domain.iter().any(|&n| n == 0) {
            return Err(Error::Config("every domain needs at least one sample".into()));
        }
        if !(self.signal_strength.is_finite() && self.signal_strength >= 0.0) {
            return Err(Error::Config(format!(
                "signal_strength must be finite and non-negative, got {}",
                self.signal_strength
            )));
        }
        if !(self.score_scale.is_finite() && self.score_scale > 0.0) {
            return Err(Error::Config(format!(
                "score_scale must be positive, got {}",
                self.score_scale
            )));
        }
        Ok(())
    }

    /// Group id per domain: explicit groups, else every domain its own.
    fn groups(&self) -> Vec<usize> {
        self.domain_groups.clone().unwrap_or_else(|| (0..self.domains).collect())
    }
}

/// A latent matrix of shape rows × cols drawn from the named stream.
fn latent_matrix(seed: u64, name: &str, rows: usize, cols: usize) -> Vec<f64> {
    let mut stream = rng::stream(seed, "gen", name);
    (0..rows * cols).map(|_| rng::normal(&mut stream)).collect()
}

/// Per-domain bilinear weight matrices W_d = W_shared + strength · W_group.
pub(crate) fn domain_weights(spec: &SyntheticSpec) -> Vec<Vec<f64>> {
    let m = spec.latent_dim;
    let shared = latent_matrix(spec.seed, "w_shared", m, m);
    let groups = spec.groups();
    let mut group_mats: IndexMap<usize, Vec<f64>> = IndexMap::new();
    for &g in &groups {
        group_mats
            .entry(g)
            .or_insert_with(|| latent_matrix(spec.seed, &format!("w_group{g}"), m, m));
    }
    groups
        .iter()
        .map(|g| {
            let gm = &group_mats[g];
            shared
                .iter()
                .zip(gm)
                .map(|(s, w)| s + spec.signal_strength * w)
                .collect()
        })
        .collect()
}

/// p^T W q / m for latent vectors p, q of length m.
fn bilinear(p: &[f64], w: &[f64], q: &[f64], m: usize) -> f64 {
    let mut acc = 0.0;
    for j in 0..m {
        let mut row = 0.0;
        for k in 0..m {
            row += w[j * m + k] * q[k];
        }
        acc += p[j] * row;
    }
    acc / m as f64
}

/// Bisection for the bias b with mean(sigmoid(score + b)) = target over the
/// given scores. Runs exactly 100 halvings of [-20, 20].
fn calibrate_bias(scores: &[f64], target: f64) -> Result<f64> {
    let mean_prob = |b: f64| -> f64 {
        scores.iter().map(|&s| sigmoid_scalar(s + b)).sum::<f64>() / scores.len() as f64
    };
    let (mut lo, mut hi) = (-20.0, 20.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mean_prob(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let b = 0.5 * (lo + hi);
    let achieved = mean_prob(b);
    if (achieved - target).abs() > 1e-6 {
        return Err(Error::Data(format!(
            "cannot calibrate CTR {target}: closest achievable mean is {achieved:.6}"
        )));
    }
    Ok(b)
}

struct GeneratedRows {
    rows: Vec<RawRow>,
    field_names: Vec<String>,
}

fn generate_rows(spec: &SyntheticSpec) -> Result<GeneratedRows> {
    spec.validate()?;
    let m = spec.latent_dim;
    let user_vecs = latent_matrix(spec.seed, "users", spec.users, m);
    let item_vecs = latent_matrix(spec.seed, "items", spec.items, m);
    let weights = domain_weights(spec);

    let mut field_names = vec!["user".to_string(), "item".to_string()];
    for c in 0..spec.fields - 2 {
        field_names.push(format!("ctx{c}"));
    }

    let mut rows = Vec::with_capacity(spec.samples_per_domain.iter().sum());
    for d in 0..spec.domains {
        let n = spec.samples_per_domain[d];
        let mut draw = rng::stream(spec.seed, "gen", &format!("impressions.d{d}"));
        let mut label_rng = rng::stream(spec.seed, "gen", &format!("labels.d{d}"));

        // Draw impressions and raw scores first; the bias is calibrated on
        // the training subset before any label is sampled.
        let mut pairs = Vec::with_capacity(n);
        let mut scores = Vec::with_capacity(n);
        let mut splits = Vec::with_capacity(n);
        let mut train_scores = Vec::new();
        for i in 0..n {
            let u = draw.gen_range(0..spec.users);
            let v = draw.gen_range(0..spec.items);
            let s = spec.score_scale
                * bilinear(&user_vecs[u * m..(u + 1) * m], &weights[d], &item_vecs[v * m..(v + 1) * m], m);
            let split = split_by_key(&format!("{d}:{i}"), spec.seed);
            if split == Split::Train {
                train_scores.push(s);
            }
            pairs.push((u, v));
            scores.push(s);
            splits.push(split);
        }
        if train_scores.is_empty() {
            return Err(Error::Data(format!("domain {d} drew no training samples; increase its size")));
        }
        let bias = calibrate_bias(&train_scores, spec.target_ctrs[d])?;

        let mut train_pos = 0usize;
        for i in 0..n {
            let (u, v) = pairs[i];
            let p = sigmoid_scalar(scores[i] + bias);
            let label = if label_rng.gen::<f64>() < p { 1.0 } else { 0.0 };
            if splits[i] == Split::Train && label == 1.0 {
                train_pos += 1;
            }
            let mut features = vec![u.to_string(), v.to_string()];
            for c in 0..spec.fields - 2 {
                let mut h = Fnv::new();
                h.update(&(c as u64).to_le_bytes());
                h.update(&(u as u64).to_le_bytes());
                h.update(&(v as u64).to_le_bytes());
                features.push((h.finish() % spec.context_vocab as u64).to_string());
            }
            rows.push(RawRow {
                features,
                domain: d.to_string(),
                label,
                split: splits[i],
            });
        }

        // The bias calibration fixes the expected training CTR exactly; the
        // realized rate is a Bernoulli mean around it, so the guard widens
        // for small domains where sampling noise dominates.
        let realized = train_pos as f64 / train_scores.len() as f64;
        let target = spec.target_ctrs[d];
        let tol = 0.005 + 4.0 * (target * (1.0 - target) / train_scores.len() as f64).sqrt();
        if (realized - target).abs() > tol {
            return Err(Error::Data(format!(
                "domain {d} realized train CTR {realized:.4} misses target {target:.4} by more than {tol:.4}"
            )));
        }
    }
    Ok(GeneratedRows { rows, field_names })
}

/// Generates, fits, and encodes the synthetic benchmark.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<DomainDataset> {
    let generated = generate_rows(spec)?;
    build_dataset(
        generated.rows,
        generated.field_names,
        "domain".to_string(),
        "label".to_string(),
    )
}

/// Generates the benchmark and also writes it as a CSV with a `split`
/// column, loadable through [`SplitRule::ByColumn`].
pub fn gen_synthetic_to_csv(spec: &SyntheticSpec, path: &Path) -> Result<DomainDataset> {
    let generated = generate_rows(spec)?;
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| Error::Data(format!("cannot create {}: {e}", path.display())))?;

    let mut header: Vec<&str> = generated.field_names.iter().map(String::as_str).collect();
    header.extend(["domain", "label", "split"]);
    writer.write_record(&header).map_err(|e| Error::Data(format!("csv write: {e}")))?;
    for row in &generated.rows {
        let mut record: Vec<String> = row.features.clone();
        record.push(row.domain.clone());
        record.push(if row.label == 1.0 { "1".into() } else { "0".into() });
        record.push(row.split.to_string());
        writer.write_record(&record).map_err(|e| Error::Data(format!("csv write: {e}")))?;
    }
    writer.flush().map_err(|e| Error::Data(format!("csv write: {e}")))?;

    build_dataset(
        generated.rows,
        generated.field_names,
        "domain".to_string(),
        "label".to_string(),
    )
}

/// The schema spec that reads a CSV produced by [`gen_synthetic_to_csv`].
pub fn synthetic_csv_schema(fields: usize) -> SchemaSpec {
    let mut feature_fields = vec!["user".to_string(), "item".to_string()];
    for c in 0..fields.saturating_sub(2) {
        feature_fields.push(format!("ctx{c}"));
    }
    SchemaSpec {
        feature_fields,
        domain_field: "domain".to_string(),
        label_field: "label".to_string(),
        delimiter: None,
        split: SplitRule::ByColumn { split_field: "split".to_string() },
    }
}

// ---------------------------------------------------------------------------
// Batch cycling
// ---------------------------------------------------------------------------

/// One domain's training batch feeder.
///
/// Holds a shuffled permutation of sample indices; each pass visits every
/// sample exactly once, and when a batch reaches the end of the permutation
/// it reshuffles and keeps filling from the new pass's head, so batch size
/// stays constant. State is two integers plus the RNG stream, which makes
/// it exactly reconstructable for checkpoint resume.
#[derive(Debug, Clone)]
pub struct BatchCycler {
    indices: Vec<usize>,
    cursor: usize,
    passes: u64,
    rng: ChaCha8Rng,
}

impl BatchCycler {
    /// A cycler over `n` samples for one domain, seeded from the master
    /// seed. The first pass's shuffle happens here.
    pub fn new(n: usize, master_seed: u64, domain: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Argument(format!("domain {domain} has no samples to batch")));
        }
        let mut rng = rng::stream(master_seed, "shuffle", &format!("domain{domain}"));
        let mut indices: Vec<usize> = (0..n).collect();
        indices.shuffle(&mut rng);
        Ok(Self { indices, cursor: 0, passes: 1, rng })
    }

    /// The next `b` sample indices, reshuffling and wrapping as needed.
    pub fn next_batch(&mut self, b: usize) -> Result<Vec<usize>> {
        if b == 0 {
            return Err(Error::Argument("batch size must be at least 1".to_string()));
        }
        let mut out = Vec::with_capacity(b);
        while out.len() < b {
            if self.cursor == self.indices.len() {
                self.indices.shuffle(&mut self.rng);
                self.passes += 1;
                self.cursor = 0;
            }
            let take = (b - out.len()).min(self.indices.len() - self.cursor);
            out.extend_from_slice(&self.indices[self.cursor..self.cursor + take]);
            self.cursor += take;
        }
        Ok(out)
    }

    /// (completed shuffles, position within the current pass) — everything
    /// a checkpoint needs to rebuild the cycler.
    pub fn state(&self) -> (u64, usize) {
        (self.passes, self.cursor)
    }

    /// Rebuilds a cycler by replaying `passes` shuffles from the seed and
    /// seeking to `cursor`.
    pub fn restore(
        n: usize,
        master_seed: u64,
        domain: usize,
        passes: u64,
        cursor: usize,
    ) -> Result<Self> {
        if passes == 0 || cursor > n {
            return Err(Error::Checkpoint(format!(
                "invalid cycler state for domain {domain}: passes={passes}, cursor={cursor}, n={n}"
            )));
        }
        let mut cycler = Self::new(n, master_seed, domain)?;
        for _ in 1..passes {
            cycler.indices.shuffle(&mut cycler.rng);
            cycler.passes += 1;
        }
        cycler.cursor = cursor;
        Ok(cycler)
    }
}

/// A model-ready batch: per-field id columns plus labels, all one domain.
#[derive(Debug, Clone)]
pub struct Batch {
    pub domain: usize,
    /// `field_ids[f][i]` is field f's id for the i-th sample.
    pub field_ids: Vec<Vec<usize>>,
    pub labels: Vec<f64>,
}

impl Batch {
    /// Gathers the given sample indices into columnar form.
    pub fn assemble(samples: &[Sample], idx: &[usize]) -> Result<Batch> {
        let first = idx
            .first()
            .and_then(|&i| samples.get(i))
            .ok_or_else(|| Error::Argument("cannot assemble an empty batch".to_string()))?;
        let fields = first.features.len();
        let domain = first.domain;
        let mut field_ids = vec![Vec::with_capacity(idx.len()); fields];
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            let s = samples
                .get(i)
                .ok_or_else(|| Error::Argument(format!("sample index {i} out of range")))?;
            debug_assert_eq!(s.domain, domain, "batch mixes domains");
            for (f, &id) in s.features.iter().enumerate() {
                field_ids[f].push(id as usize);
            }
            labels.push(s.label);
        }
        Ok(Batch { domain, field_ids, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Order-sensitive hash of a batch's sample indices, for audits that check
/// two runs consumed identical batch sequences.
pub fn index_hash(idx: &[usize]) -> u64 {
    let mut h = Fnv::new();
    for &i in idx {
        h.update(&(i as u64).to_le_bytes());
    }
    h.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;
    use std::io::Write;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    fn column_schema(features: &[&str]) -> SchemaSpec {
        SchemaSpec {
            feature_fields: features.iter().map(|s| s.to_string()).collect(),
            domain_field: "domain".to_string(),
            label_field: "label".to_string(),
            delimiter: None,
            split: SplitRule::ByColumn { split_field: "split".to_string() },
        }
    }

    #[test]
    fn split_by_key_is_deterministic_and_atomic() {
        for key in ["u1", "u2", "somebody"] {
            assert_eq!(split_by_key(key, 7), split_by_key(key, 7));
        }
        // Different seeds move at least one of these keys.
        let moved = (0..100)
            .any(|i| split_by_key(&format!("u{i}"), 1) != split_by_key(&format!("u{i}"), 2));
        assert!(moved);
    }

    #[test]
    fn split_masses_approach_8_1_1() {
        let mut counts = [0usize; 3];
        let n = 10_000;
        for i in 0..n {
            match split_by_key(&format!("user-{i}"), 42) {
                Split::Train => counts[0] += 1,
                Split::Validation => counts[1] += 1,
                Split::Test => counts[2] += 1,
            }
        }
        let frac = |c: usize| c as f64 / n as f64;
        assert!((frac(counts[0]) - 0.8).abs() < 0.02, "train {}", frac(counts[0]));
        assert!((frac(counts[1]) - 0.1).abs() < 0.02, "validation {}", frac(counts[1]));
        assert!((frac(counts[2]) - 0.1).abs() < 0.02, "test {}", frac(counts[2]));
    }

    #[test]
    fn loads_and_partitions_by_domain() {
        let f = write_temp(
            "user,domain,label,split\n\
             a,0,1,train\n\
             b,0,0,train\n\
             c,1,1,train\n",
        );
        let ds = load_csv(f.path(), &column_schema(&["user"])).unwrap();
        assert_eq!(ds.num_domains(), 2);
        assert_eq!(ds.counts(), vec![(2, 0, 0), (1, 0, 0)]);
        assert_eq!(ds.domains[0].name, "0");
        assert_eq!(ds.domains[1].name, "1");
    }

    #[test]
    fn vocab_fits_on_train_only_and_test_gets_oov() {
        let f = write_temp(
            "user,domain,label,split\n\
             alice,0,1,train\n\
             bob,0,0,train\n\
             carol,0,1,test\n",
        );
        let ds = load_csv(f.path(), &column_schema(&["user"])).unwrap();
        assert_eq!(ds.schema.vocab_sizes(), vec![2]); // alice, bob only
        let test = ds.split(0, Split::Test).unwrap();
        assert_eq!(test[0].features[0], 2); // OOV id = vocab size
    }

    #[test]
    fn vocab_ids_are_sorted_numeric_aware() {
        let f = write_temp(
            "user,domain,label,split\n\
             10,0,1,train\n\
             9,0,0,train\n\
             2,0,1,train\n",
        );
        let ds = load_csv(f.path(), &column_schema(&["user"])).unwrap();
        let vocab = &ds.schema.vocabs[0];
        assert_eq!(vocab.get("2"), Some(&0));
        assert_eq!(vocab.get("9"), Some(&1));
        assert_eq!(vocab.get("10"), Some(&2)); // numeric, not lexicographic
    }

    #[test]
    fn missing_column_and_bad_label_are_reported() {
        let f = write_temp("user,domain,label,split\na,0,1,train\n");
        let mut bad = column_schema(&["user", "nonexistent"]);
        let err = load_csv(f.path(), &bad).unwrap_err();
        assert!(err.to_string().contains("nonexistent"));
        bad = column_schema(&["user"]);
        bad.label_field = "user".into();
        assert!(load_csv(f.path(), &bad).is_err()); // label "a" unparsable

        let f2 = write_temp("user,domain,label,split\na,0,2,train\n");
        let err = load_csv(f2.path(), &column_schema(&["user"])).unwrap_err();
        assert!(err.to_string().contains("binary"), "{err}");
        assert!(err.to_string().contains(":2"), "line number expected: {err}");
    }

    #[test]
    fn domain_only_in_test_is_rejected() {
        let f = write_temp(
            "user,domain,label,split\n\
             a,0,1,train\n\
             b,9,0,test\n",
        );
        let err = load_csv(f.path(), &column_schema(&["user"])).unwrap_err();
        assert!(err.to_string().contains("\"9\""), "{err}");
    }

    /// Log-style file with the public-dataset column convention: domain from
    /// the tab column, date-windowed splits, counts checked by hand.
    #[test]
    fn date_rule_partitions_a_log_extract() {
        let f = write_temp(
            "user_id,video_id,tab,is_click,date\n\
             1,100,0,1,20220408\n\
             1,101,0,0,20220418\n\
             2,102,0,1,20220419\n\
             2,107,1,1,20220410\n\
             2,103,1,0,20220421\n\
             1,104,1,1,20220422\n\
             3,105,1,0,20220508\n\
             3,106,0,1,20220509\n", // outside all windows: dropped
        );
        let spec = SchemaSpec {
            feature_fields: vec!["user_id".into(), "video_id".into()],
            domain_field: "tab".into(),
            label_field: "is_click".into(),
            delimiter: None,
            split: SplitRule::ByDate {
                date_field: "date".into(),
                train: ["20220408".into(), "20220421".into()],
                validation: ["20220419".into(), "20220421".into()],
                test: ["20220422".into(), "20220508".into()],
            },
        };
        let ds = load_csv(f.path(), &spec).unwrap();
        assert_eq!(ds.num_domains(), 2);
        // tab 0: two train (Apr 8, 18), one validation (Apr 19).
        assert_eq!(ds.counts()[0], (2, 1, 0));
        // tab 1: one train (Apr 10), one validation (Apr 21: the validation
        // window wins where it overlaps train), two test (Apr 22, May 8).
        assert_eq!(ds.counts()[1], (1, 1, 2));
    }

    #[test]
    fn synthetic_is_deterministic() {
        let spec = SyntheticSpec {
            domains: 2,
            users: 50,
            items: 40,
            fields: 3,
            samples_per_domain: vec![400, 300],
            target_ctrs: vec![0.1, 0.2],
            signal_strength: 0.5,
            domain_groups: None,
            context_vocab: 10,
            latent_dim: 4,
            score_scale: 3.0,
            seed: 5,
        };
        let a = gen_synthetic(&spec).unwrap();
        let b = gen_synthetic(&spec).unwrap();
        for d in 0..2 {
            for s in Split::ALL {
                assert_eq!(a.split(d, s).unwrap(), b.split(d, s).unwrap());
            }
        }
        let c = gen_synthetic(&SyntheticSpec { seed: 6, ..spec }).unwrap();
        assert_ne!(a.split(0, Split::Train).unwrap(), c.split(0, Split::Train).unwrap());
    }

    #[test]
    fn synthetic_hits_ctr_targets() {
        let spec = SyntheticSpec {
            domains: 2,
            users: 400,
            items: 300,
            fields: 4,
            samples_per_domain: vec![20_000, 20_000],
            target_ctrs: vec![0.02, 0.08],
            signal_strength: 0.7,
            domain_groups: None,
            context_vocab: 20,
            latent_dim: 8,
            score_scale: 3.0,
            seed: 11,
        };
        let ds = gen_synthetic(&spec).unwrap();
        for (d, &target) in spec.target_ctrs.iter().enumerate() {
            let ctr = ds.train_ctr(d).unwrap();
            assert!((ctr - target).abs() < 0.005, "domain {d}: {ctr} vs {target}");
        }
    }

    #[test]
    fn strength_zero_collapses_label_functions() {
        let spec = SyntheticSpec {
            domains: 3,
            signal_strength: 0.0,
            samples_per_domain: vec![100, 100, 100],
            target_ctrs: vec![0.1, 0.1, 0.1],
            domain_groups: None,
            ..SyntheticSpec::default()
        };
        let w = domain_weights(&spec);
        assert_eq!(w[0], w[1]);
        assert_eq!(w[1], w[2]);

        let strong = SyntheticSpec { signal_strength: 1.0, ..spec };
        let w = domain_weights(&strong);
        assert_ne!(w[0], w[1]);
        assert_ne!(w[1], w[2]);
    }

    #[test]
    fn domain_groups_share_label_functions() {
        let spec = SyntheticSpec {
            domains: 4,
            signal_strength: 0.8,
            samples_per_domain: vec![100; 4],
            target_ctrs: vec![0.1; 4],
            domain_groups: Some(vec![0, 0, 1, 1]),
            ..SyntheticSpec::default()
        };
        let w = domain_weights(&spec);
        assert_eq!(w[0], w[1]);
        assert_eq!(w[2], w[3]);
        assert_ne!(w[0], w[2]);
    }

    #[test]
    fn synthetic_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("synthetic.csv");
        let spec = SyntheticSpec {
            domains: 2,
            users: 30,
            items: 20,
            fields: 3,
            samples_per_domain: vec![300, 200],
            target_ctrs: vec![0.2, 0.3],
            signal_strength: 0.5,
            domain_groups: None,
            context_vocab: 10,
            latent_dim: 4,
            score_scale: 3.0,
            seed: 9,
        };
        let direct = gen_synthetic_to_csv(&spec, &path).unwrap();
        let reloaded = load_csv(&path, &synthetic_csv_schema(spec.fields)).unwrap();
        assert_eq!(direct.schema, reloaded.schema);
        for d in 0..2 {
            for s in Split::ALL {
                assert_eq!(direct.split(d, s).unwrap(), reloaded.split(d, s).unwrap());
            }
        }

        // Same spec, same bytes.
        let path2 = dir.path().join("again.csv");
        gen_synthetic_to_csv(&spec, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn cycler_covers_each_pass_exactly_once() {
        let mut cycler = BatchCycler::new(5, 3, 0).unwrap();
        let batches: Vec<Vec<usize>> = (0..3).map(|_| cycler.next_batch(2).unwrap()).collect();
        let flat: Vec<usize> = batches.iter().flatten().copied().collect();
        assert_eq!(flat.len(), 6);
        // First five draws are a permutation of 0..5; the sixth starts the
        // next pass.
        let mut first_pass = flat[..5].to_vec();
        first_pass.sort_unstable();
        assert_eq!(first_pass, vec![0, 1, 2, 3, 4]);

        // Large pass: every sample exactly once per pass.
        let n = 10_000;
        let mut cycler = BatchCycler::new(n, 3, 1).unwrap();
        let mut seen = HashMap::new();
        for _ in 0..n / 50 {
            for i in cycler.next_batch(50).unwrap() {
                *seen.entry(i).or_insert(0usize) += 1;
            }
        }
        assert_eq!(seen.len(), n);
        assert!(seen.values().all(|&c| c == 1));
    }

    #[test]
    fn cycler_is_deterministic_and_restorable() {
        let run = |draws: usize| {
            let mut c = BatchCycler::new(17, 9, 2).unwrap();
            (0..draws).map(|_| c.next_batch(4).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(10), run(10));

        // Snapshot after 6 draws, restore, and continue in lockstep.
        let mut original = BatchCycler::new(17, 9, 2).unwrap();
        for _ in 0..6 {
            original.next_batch(4).unwrap();
        }
        let (passes, cursor) = original.state();
        let mut resumed = BatchCycler::restore(17, 9, 2, passes, cursor).unwrap();
        for _ in 0..8 {
            assert_eq!(original.next_batch(4).unwrap(), resumed.next_batch(4).unwrap());
        }
    }

    #[test]
    fn cycler_rejects_degenerate_inputs() {
        assert!(BatchCycler::new(0, 1, 0).is_err());
        let mut c = BatchCycler::new(3, 1, 0).unwrap();
        assert!(c.next_batch(0).is_err());
        // Batch larger than the pass wraps repeatedly.
        let b = c.next_batch(7).unwrap();
        assert_eq!(b.len(), 7);
    }

    #[test]
    fn batch_assembly_is_columnar() {
        let samples = vec![
            Sample { domain: 1, features: vec![3, 7], label: 1.0 },
            Sample { domain: 1, features: vec![4, 8], label: 0.0 },
            Sample { domain: 1, features: vec![5, 9], label: 1.0 },
        ];
        let batch = Batch::assemble(&samples, &[2, 0]).unwrap();
        assert_eq!(batch.domain, 1);
        assert_eq!(batch.field_ids, vec![vec![5, 3], vec![9, 7]]);
        assert_eq!(batch.labels, vec![1.0, 1.0]);
        assert!(Batch::assemble(&samples, &[]).is_err());
    }

    #[test]
    fn index_hash_is_order_sensitive() {
        assert_ne!(index_hash(&[1, 2, 3]), index_hash(&[3, 2, 1]));
        assert_eq!(index_hash(&[1, 2, 3]), index_hash(&[1, 2, 3]));
    }

    #[test]
    fn schema_fingerprint_tracks_content() {
        let f = write_temp("user,domain,label,split\na,0,1,train\nb,0,0,train\n");
        let ds = load_csv(f.path(), &column_schema(&["user"])).unwrap();
        let f2 = write_temp("user,domain,label,split\na,0,1,train\nc,0,0,train\n");
        let ds2 = load_csv(f2.path(), &column_schema(&["user"])).unwrap();
        assert_eq!(ds.schema.fingerprint(), ds.schema.fingerprint());
        assert_ne!(ds.schema.fingerprint(), ds2.schema.fingerprint());
    }

    #[test]
    fn spec_validation_catches_mistakes() {
        let mut spec = SyntheticSpec::default();
        spec.target_ctrs = vec![0.5]; // wrong length
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
        let mut spec = SyntheticSpec::default();
        spec.target_ctrs[0] = 1.5;
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
        let mut spec = SyntheticSpec::default();
        spec.domains = 1;
        spec.samples_per_domain = vec![10];
        spec.target_ctrs = vec![0.1];
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
    }
}
