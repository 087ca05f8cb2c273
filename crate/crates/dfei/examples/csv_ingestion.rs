//! Loads a CSV log, fits the categorical vocabularies on the training
//! split, and trains a model on it.
//!
//! ```sh
//! cargo run --release --example csv_ingestion
//! ```

use std::io::Write as _;

use dfei::data::{load_csv, SchemaSpec, Split, SplitRule};
use dfei::eval::evaluate_all;
use dfei::model::{DfeiModel, ModelConfig};
use dfei::train::{TrainConfig, Trainer};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Write a small click log to disk. Two domains with opposite tastes:
    // items that `home` clicks on, `deals` mostly ignores, and vice
    // versa, so the signal survives for users the model never saw.
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("clicks.csv");
    let mut file = std::fs::File::create(&path)?;
    writeln!(file, "user,item,channel,domain,click")?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..6000 {
        let user: u32 = rng.gen_range(0..120);
        let item: u32 = rng.gen_range(0..90);
        let channel: u32 = rng.gen_range(0..5);
        let domain = if rng.gen_bool(0.6) { "home" } else { "deals" };
        let hot = if domain == "home" { item % 3 == 0 } else { item % 3 == 1 };
        let mut p = if hot { 0.28 } else { 0.03 };
        if channel == 0 {
            p *= 1.5;
        }
        let click = u8::from(rng.gen_bool(p));
        writeln!(file, "u{user},i{item},c{channel},{domain},{click}")?;
    }
    drop(file);

    // Split by user so no user appears in two splits, which would leak
    // memorized preferences into validation.
    let spec = SchemaSpec {
        feature_fields: vec!["user".into(), "item".into(), "channel".into()],
        domain_field: "domain".into(),
        label_field: "click".into(),
        delimiter: None,
        split: SplitRule::ByKey { key_field: "user".into(), seed: 5 },
    };
    let data = load_csv(&path, &spec)?;

    println!("loaded {} domains from {}:", data.num_domains(), path.display());
    for splits in &data.domains {
        println!(
            "  {}: {} train / {} validation / {} test rows",
            splits.name,
            splits.train.len(),
            splits.validation.len(),
            splits.test.len()
        );
    }
    println!(
        "vocabulary sizes {:?} (+1 embedding row each for unseen values)",
        data.schema.vocab_sizes()
    );

    let mut mc = ModelConfig::new(
        data.num_domains(),
        data.schema.num_fields(),
        data.schema.vocab_sizes(),
    );
    mc.embed_dim = 8;
    mc.tower_dims = vec![32, 16];
    mc.dropout_rates = vec![0.0, 0.0];
    mc.attention_dim = 8;
    mc.head_dims = vec![16];
    let model = DfeiModel::new(mc, 3)?;

    let tc = TrainConfig {
        batch_size: 256,
        learning_rate: 5e-3,
        epochs: 8,
        patience: 3,
        seed: 3,
        ..Default::default()
    };
    let mut trainer = Trainer::new(model, tc, &data)?;
    let report = trainer.fit(&data, None)?;
    println!(
        "\ntrained {} epochs, best mean validation AUC {:.4}",
        report.epochs.len(),
        report.best_avg_val_auc
    );

    let test = evaluate_all(&trainer.model, &data, Split::Test)?;
    for (splits, auc) in data.domains.iter().zip(&test.domain_auc) {
        if let Some(auc) = auc {
            println!("{}: test AUC {auc:.4}", splits.name);
        }
    }
    Ok(())
}
