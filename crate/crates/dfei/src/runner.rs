//! The workflows behind each CLI subcommand. Every command resolves one
//! [`RunConfig`], produces deterministic JSON artifacts in the output
//! directory, and records them in a per-command manifest (content hashes,
//! never timestamps), so re-running a command reproduces its outputs byte
//! for byte.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{DataConfig, RunConfig};
use crate::data::{
    fnv1a, gen_synthetic, gen_synthetic_to_csv, load_csv, DatasetSchema, DomainDataset, Split,
};
use crate::error::{Error, Result};
use crate::eval::{
    alpha_sweep, evaluate_all, export_domain_features, run_ablation, AblationReport, AlphaReport,
    EvalReport,
};
use crate::model::DfeiModel;
use crate::train::{FitReport, TrainConfig, Trainer};

/// Environment variable that overrides the output directory (and nothing
/// else) — the hook CI uses to redirect artifacts.
pub const OUT_ENV: &str = "DFEI_OUT";

/// Output-directory precedence: environment override, then the CLI flag,
/// then the config file, then `./out`.
fn resolve_out_dir(env: Option<OsString>, flag: Option<&Path>, cfg: &RunConfig) -> PathBuf {
    env.map(PathBuf::from)
        .or_else(|| flag.map(Path::to_path_buf))
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

/// A validated config bound to an output directory.
pub struct Runner {
    cfg: RunConfig,
    out_dir: PathBuf,
}

impl Runner {
    pub fn new(cfg: RunConfig, out_flag: Option<&Path>) -> Result<Runner> {
        cfg.validate()?;
        let out_dir = resolve_out_dir(std::env::var_os(OUT_ENV), out_flag, &cfg);
        Ok(Runner { cfg, out_dir })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    /// Materializes the configured data source as a fitted dataset.
    pub fn load_data(&self) -> Result<DomainDataset> {
        match &self.cfg.data {
            DataConfig::Synthetic { spec } => gen_synthetic(spec),
            DataConfig::Csv { path, schema } => load_csv(Path::new(path), schema),
        }
    }

    fn ensure_out(&self) -> Result<()> {
        fs::create_dir_all(&self.out_dir).map_err(|e| {
            Error::io(format!("cannot create output dir {}: {e}", self.out_dir.display()))
        })
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let path = self.out_dir.join(name);
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| Error::io(format!("serializing {name}: {e}")))?;
        text.push('\n');
        fs::write(&path, text)
            .map_err(|e| Error::io(format!("writing {}: {e}", path.display())))?;
        Ok(path)
    }

    /// Writes `<command>_manifest.json`: resolved config, dataset
    /// fingerprint, crate version, and a content hash per artifact.
    fn write_manifest(
        &self,
        command: &str,
        schema: &DatasetSchema,
        artifacts: &[PathBuf],
    ) -> Result<PathBuf> {
        #[derive(Serialize)]
        struct ArtifactEntry {
            name: String,
            bytes: u64,
            fnv64: String,
        }
        #[derive(Serialize)]
        struct Manifest<'a> {
            command: &'a str,
            crate_version: &'a str,
            dataset_fingerprint: String,
            config: crate::config::ResolvedConfig,
            artifacts: Vec<ArtifactEntry>,
        }
        let mut entries = Vec::with_capacity(artifacts.len());
        for path in artifacts {
            let bytes = fs::read(path)
                .map_err(|e| Error::io(format!("hashing {}: {e}", path.display())))?;
            entries.push(ArtifactEntry {
                name: path
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default(),
                bytes: bytes.len() as u64,
                fnv64: format!("{:016x}", fnv1a(&bytes)),
            });
        }
        self.write_json(
            &format!("{command}_manifest.json"),
            &Manifest {
                command,
                crate_version: env!("CARGO_PKG_VERSION"),
                dataset_fingerprint: format!("{:016x}", schema.fingerprint()),
                config: self.cfg.resolved(schema),
                artifacts: entries,
            },
        )
    }

    fn default_checkpoint(&self) -> PathBuf {
        self.out_dir.join("checkpoint.bin")
    }
}

/// Trains one model and leaves `checkpoint.bin`, `train_report.json`,
/// `resolved_config.json`, and a manifest in the output directory.
pub fn cmd_train(cfg: RunConfig, out_flag: Option<&Path>) -> Result<FitReport> {
    let runner = Runner::new(cfg, out_flag)?;
    runner.ensure_out()?;
    let data = runner.load_data()?;
    let resolved = runner.cfg.resolved(&data.schema);
    let model = DfeiModel::new(resolved.model.clone(), runner.cfg.train.seed)?;
    let mut trainer = Trainer::new(model, runner.cfg.train.clone(), &data)?;
    let report = trainer.fit(&data, Some(runner.out_dir()))?;
    log::info!(
        "training done: best epoch {} with mean validation AUC {:.4}",
        report.best_epoch,
        report.best_avg_val_auc
    );

    let mut artifacts = vec![
        runner.write_json("resolved_config.json", &resolved)?,
        runner.write_json("train_report.json", &report)?,
    ];
    let ckpt = runner.default_checkpoint();
    if ckpt.exists() {
        artifacts.push(ckpt);
    }
    runner.write_manifest("train", &data.schema, &artifacts)?;
    Ok(report)
}

/// Scores a trained checkpoint on one split and writes
/// `eval_report_<split>.json`. Without an explicit checkpoint path, reads
/// `checkpoint.bin` from the output directory.
pub fn cmd_evaluate(
    cfg: RunConfig,
    checkpoint: Option<&Path>,
    split: Split,
    out_flag: Option<&Path>,
) -> Result<EvalReport> {
    let runner = Runner::new(cfg, out_flag)?;
    runner.ensure_out()?;
    let data = runner.load_data()?;
    let ckpt = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| runner.default_checkpoint());
    let trainer = Trainer::resume(&ckpt, &data)?;
    let mut report = evaluate_all(&trainer.model, &data, split)?;
    report.seed = trainer.config().seed;
    log::info!("{split} mean AUC {:.4} over {} domains", report.avg_auc, data.num_domains());
    let artifact = runner.write_json(&format!("eval_report_{split}.json"), &report)?;
    runner.write_manifest(&format!("evaluate_{split}"), &data.schema, &[artifact])?;
    Ok(report)
}

/// Materializes the configured synthetic benchmark as `dataset.csv` plus a
/// summary of realized sizes and click-through rates.
pub fn cmd_gen_data(cfg: RunConfig, out_flag: Option<&Path>) -> Result<PathBuf> {
    let runner = Runner::new(cfg, out_flag)?;
    let DataConfig::Synthetic { spec } = &runner.cfg.data else {
        return Err(Error::Config(
            "gen-data needs a synthetic data source; this config reads a CSV".into(),
        ));
    };
    runner.ensure_out()?;
    let csv_path = runner.out_dir.join("dataset.csv");
    let data = gen_synthetic_to_csv(spec, &csv_path)?;

    #[derive(Serialize)]
    struct DomainSummary {
        domain: usize,
        train: usize,
        validation: usize,
        test: usize,
        train_ctr: f64,
    }
    let summary: Vec<DomainSummary> = data
        .counts()
        .iter()
        .enumerate()
        .map(|(d, &(train, validation, test))| {
            Ok(DomainSummary {
                domain: d,
                train,
                validation,
                test,
                train_ctr: data.train_ctr(d)?,
            })
        })
        .collect::<Result<_>>()?;
    log::info!("wrote {} with {} domains", csv_path.display(), data.num_domains());
    let summary_path = runner.write_json("dataset_summary.json", &summary)?;
    runner.write_manifest("gen_data", &data.schema, &[csv_path.clone(), summary_path])?;
    Ok(csv_path)
}

/// Trains every model variant across the evaluation seeds and writes the
/// comparison (`ablation_report.json`).
pub fn cmd_ablate(
    cfg: RunConfig,
    seeds_flag: Option<Vec<u64>>,
    out_flag: Option<&Path>,
) -> Result<AblationReport> {
    let runner = Runner::new(cfg, out_flag)?;
    runner.ensure_out()?;
    let data = runner.load_data()?;
    let seeds = seeds_flag.unwrap_or_else(|| runner.cfg.eval.seeds.clone());
    let model_cfg = runner.cfg.model.resolve(&data.schema, runner.cfg.train.l2);
    let report = run_ablation(&data, &model_cfg, &runner.cfg.train, &seeds)?;
    let artifact = runner.write_json("ablation_report.json", &report)?;
    runner.write_manifest("ablate", &data.schema, &[artifact])?;
    Ok(report)
}

/// Exports a checkpoint's learned domain vectors (`domain_features.csv`)
/// and their cosine-similarity matrix (`domain_similarity.csv`).
pub fn cmd_export_features(
    cfg: RunConfig,
    checkpoint: Option<&Path>,
    out_flag: Option<&Path>,
) -> Result<(PathBuf, PathBuf)> {
    let runner = Runner::new(cfg, out_flag)?;
    runner.ensure_out()?;
    let data = runner.load_data()?;
    let ckpt = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| runner.default_checkpoint());
    let trainer = Trainer::resume(&ckpt, &data)?;
    let ctrs: Vec<f64> =
        (0..data.num_domains()).map(|d| data.train_ctr(d)).collect::<Result<_>>()?;
    let features = runner.out_dir.join("domain_features.csv");
    let similarity = runner.out_dir.join("domain_similarity.csv");
    export_domain_features(&trainer.model, &ctrs, &features, &similarity)?;
    runner.write_manifest("export_features", &data.schema, &[features.clone(), similarity.clone()])?;
    Ok((features, similarity))
}

/// Sweeps the bank's EMA decay over a grid, training one model per
/// (decay, seed), and writes `alpha_sweep.json`.
pub fn cmd_alpha_sweep(
    cfg: RunConfig,
    alphas_flag: Option<Vec<f64>>,
    seeds_flag: Option<Vec<u64>>,
    out_flag: Option<&Path>,
) -> Result<AlphaReport> {
    let runner = Runner::new(cfg, out_flag)?;
    runner.ensure_out()?;
    let data = runner.load_data()?;
    let alphas = alphas_flag.unwrap_or_else(|| runner.cfg.eval.alpha_grid.clone());
    let seeds = seeds_flag.unwrap_or_else(|| runner.cfg.eval.seeds.clone());
    let model_cfg = runner.cfg.model.resolve(&data.schema, runner.cfg.train.l2);
    let report = alpha_sweep(&data, &model_cfg, &runner.cfg.train, &alphas, &seeds)?;
    let artifact = runner.write_json("alpha_sweep.json", &report)?;
    runner.write_manifest("alpha_sweep", &data.schema, &[artifact])?;
    Ok(report)
}

/// A compact configuration for smoke runs and tests: two domains, a few
/// hundred rows, and a model small enough to train in well under a second.
pub fn smoke_config(seed: u64) -> RunConfig {
    use crate::data::SyntheticSpec;
    let mut cfg = RunConfig::default();
    cfg.data = DataConfig::Synthetic {
        spec: SyntheticSpec {
            domains: 2,
            users: 60,
            items: 50,
            fields: 3,
            samples_per_domain: vec![400, 250],
            target_ctrs: vec![0.2, 0.45],
            signal_strength: 1.5,
            domain_groups: Some(vec![0, 1]),
            context_vocab: 8,
            latent_dim: 4,
            score_scale: 3.0,
            seed,
        },
    };
    cfg.model.embed_dim = Some(4);
    cfg.model.tower_dims = Some(vec![8, 4]);
    cfg.model.dropout_rates = Some(vec![0.1, 0.1]);
    cfg.model.attention_dim = Some(4);
    cfg.model.head_dims = Some(vec![4]);
    cfg.train = TrainConfig { batch_size: 64, epochs: 2, seed, ..TrainConfig::default() };
    cfg.eval.seeds = vec![seed, seed + 1];
    cfg
}
