//! Run configuration: a single JSON document describing the data source,
//! model hyperparameters, optimization settings, and evaluation plan.
//!
//! Model shape fields that depend on the data (domain count, field count,
//! vocabulary sizes) are always derived from the fitted dataset, never
//! configured; the `model` section carries only hyperparameters and leaves
//! any field unset to take the built-in default.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{DatasetSchema, SchemaSpec, SyntheticSpec};
use crate::error::{Error, Result};
use crate::eval::DEFAULT_ALPHA_GRID;
use crate::model::{ModelConfig, Variant};
use crate::train::TrainConfig;

/// Where samples come from.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    /// The built-in multi-domain benchmark generator.
    Synthetic {
        #[serde(default)]
        spec: SyntheticSpec,
    },
    /// A CSV file plus the schema that maps its columns onto samples.
    Csv { path: String, schema: SchemaSpec },
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Synthetic { spec: SyntheticSpec::default() }
    }
}

/// Model hyperparameters; unset fields keep the architecture defaults.
/// The L2 coefficient lives in the `train` section — it is an
/// optimization setting, configured once.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub embed_dim: Option<usize>,
    pub tower_dims: Option<Vec<usize>>,
    pub dropout_rates: Option<Vec<f64>>,
    pub attention_dim: Option<usize>,
    pub decay: Option<f64>,
    pub head_dims: Option<Vec<usize>>,
    pub variant: Option<Variant>,
}

impl ModelSection {
    /// Instantiates the full model configuration against a fitted schema.
    pub fn resolve(&self, schema: &DatasetSchema, l2: f64) -> ModelConfig {
        let mut c = ModelConfig::new(
            schema.num_domains(),
            schema.num_fields(),
            schema.vocab_sizes(),
        );
        if let Some(v) = self.embed_dim {
            c.embed_dim = v;
        }
        if let Some(v) = &self.tower_dims {
            c.tower_dims = v.clone();
        }
        if let Some(v) = &self.dropout_rates {
            c.dropout_rates = v.clone();
        }
        if let Some(v) = self.attention_dim {
            c.attention_dim = v;
        }
        if let Some(v) = self.decay {
            c.decay = v;
        }
        if let Some(v) = &self.head_dims {
            c.head_dims = v.clone();
        }
        if let Some(v) = self.variant {
            c.variant = v;
        }
        c.l2 = l2;
        c
    }
}

/// Multi-seed evaluation plan for ablations and decay sweeps.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub seeds: Vec<u64>,
    pub alpha_grid: Vec<f64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { seeds: vec![1, 2, 3, 4, 5], alpha_grid: DEFAULT_ALPHA_GRID.to_vec() }
    }
}

/// Everything one run needs. Unknown keys are rejected so typos fail
/// loudly instead of silently keeping defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub output_dir: Option<String>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("malformed run config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if let DataConfig::Synthetic { spec } = &self.data {
            spec.validate()?;
        }
        if self.eval.seeds.is_empty() {
            return Err(Error::Config("eval.seeds must not be empty".into()));
        }
        let mut sorted = self.eval.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.eval.seeds.len() {
            return Err(Error::Config("eval.seeds contains duplicates".into()));
        }
        if let Some(a) = self.eval.alpha_grid.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::Config(format!("eval.alpha_grid value {a} outside [0, 1]")));
        }
        Ok(())
    }

    /// The fully-resolved configuration a run actually used: every default
    /// filled in, model shape fields included. Written next to the other
    /// artifacts so runs are reproducible from their output alone.
    pub fn resolved(&self, schema: &DatasetSchema) -> ResolvedConfig {
        ResolvedConfig {
            data: self.data.clone(),
            model: self.model.resolve(schema, self.train.l2),
            train: self.train.clone(),
            eval: self.eval.clone(),
            output_dir: self.output_dir.clone(),
        }
    }
}

/// [`RunConfig`] after resolution: the `model` section is the concrete
/// [`ModelConfig`] including data-derived shape fields.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub output_dir: Option<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_and_validates() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back = RunConfig::from_json(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected_with_context() {
        let err = RunConfig::from_json(r#"{"trian": {}}"#).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        assert!(err.to_string().contains("trian"), "{err}");

        let nested = r#"{"model": {"embed_dims": 8}}"#;
        assert!(RunConfig::from_json(nested).is_err());
    }

    #[test]
    fn partial_configs_keep_defaults_elsewhere() {
        let cfg =
            RunConfig::from_json(r#"{"train": {"seed": 99}, "model": {"embed_dim": 8}}"#).unwrap();
        assert_eq!(cfg.train.seed, 99);
        assert_eq!(cfg.train.batch_size, TrainConfig::default().batch_size);
        assert_eq!(cfg.model.embed_dim, Some(8));
        assert!(cfg.model.tower_dims.is_none());
    }

    #[test]
    fn model_section_resolves_against_a_schema() {
        use crate::data::{gen_synthetic, SyntheticSpec};
        let spec = SyntheticSpec {
            domains: 2,
            users: 30,
            items: 20,
            fields: 3,
            samples_per_domain: vec![150, 120],
            target_ctrs: vec![0.2, 0.4],
            signal_strength: 1.0,
            domain_groups: Some(vec![0, 1]),
            context_vocab: 6,
            latent_dim: 3,
            score_scale: 3.0,
            seed: 2,
        };
        let data = gen_synthetic(&spec).unwrap();
        let section = ModelSection {
            embed_dim: Some(8),
            tower_dims: Some(vec![16, 8]),
            dropout_rates: Some(vec![0.0, 0.0]),
            attention_dim: Some(8),
            head_dims: Some(vec![8]),
            ..ModelSection::default()
        };
        let mc = section.resolve(&data.schema, 1e-5);
        assert_eq!(mc.num_domains, 2);
        assert_eq!(mc.fields, 3);
        assert_eq!(mc.vocab_sizes, data.schema.vocab_sizes());
        assert_eq!(mc.embed_dim, 8);
        assert_eq!(mc.l2, 1e-5);
        assert_eq!(mc.decay, 0.9, "unset fields keep architecture defaults");
        mc.validate().unwrap();
    }

    #[test]
    fn validation_rejects_bad_eval_sections() {
        let text = r#"{"eval": {"seeds": []}}"#;
        assert!(RunConfig::from_json(text).is_err());
        let text = r#"{"eval": {"seeds": [1, 1]}}"#;
        assert!(RunConfig::from_json(text).is_err());
        let text = r#"{"eval": {"alpha_grid": [0.5, 1.5]}}"#;
        assert!(RunConfig::from_json(text).is_err());
    }
}
