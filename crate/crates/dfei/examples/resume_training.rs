//! Saves a checkpoint during training, rebuilds the trainer from it, and
//! shows that the restored state is bit-exact before continuing to train.
//!
//! Checkpoints carry everything the loop needs — parameters, Adam moments,
//! the domain-feature bank, batch cursors, and the dropout RNG position —
//! so a resumed run retraces the interrupted one exactly.
//!
//! ```sh
//! cargo run --release --example resume_training
//! ```

use dfei::data::{gen_synthetic, Batch, Split, SyntheticSpec};
use dfei::model::{DfeiModel, ModelConfig};
use dfei::train::{TrainConfig, Trainer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SyntheticSpec {
        domains: 3,
        users: 100,
        items: 80,
        fields: 4,
        samples_per_domain: vec![2500, 1500, 800],
        target_ctrs: vec![0.05, 0.08, 0.12],
        signal_strength: 1.0,
        domain_groups: Some(vec![0, 0, 1]),
        context_vocab: 10,
        latent_dim: 6,
        score_scale: 3.0,
        seed: 13,
    };
    let data = gen_synthetic(&spec)?;

    let mut mc = ModelConfig::new(
        data.num_domains(),
        data.schema.num_fields(),
        data.schema.vocab_sizes(),
    );
    mc.embed_dim = 6;
    mc.tower_dims = vec![16, 8];
    mc.dropout_rates = vec![0.1, 0.0];
    mc.attention_dim = 8;
    mc.head_dims = vec![8];
    let model = DfeiModel::new(mc, 13)?;

    // First leg: three epochs, checkpointing every improving epoch.
    let dir = tempfile::tempdir()?;
    let tc = TrainConfig {
        batch_size: 256,
        learning_rate: 2e-3,
        epochs: 3,
        patience: 3,
        seed: 13,
        ..Default::default()
    };
    let mut trainer = Trainer::new(model, tc, &data)?;
    let first = trainer.fit(&data, Some(dir.path()))?;
    println!(
        "first leg: {} epochs, best epoch {} (mean validation AUC {:.4})",
        first.epochs.len(),
        first.best_epoch,
        first.best_avg_val_auc
    );

    // Rebuild from the file. `fit` has already restored the best epoch's
    // state in memory, and the checkpoint was written at that same epoch,
    // so the two models must agree bit for bit.
    let checkpoint = dir.path().join(first.checkpoint_file.as_deref().expect("fit improved"));
    let resumed = Trainer::resume(&checkpoint, &data)?;
    println!(
        "resumed from {}: epoch {}, global step {}",
        checkpoint.display(),
        resumed.epoch(),
        resumed.global_step()
    );

    let batch = Batch::assemble(data.split(0, Split::Test)?, &(0..16).collect::<Vec<_>>())?;
    let a = trainer.model.predict(&batch)?;
    let b = resumed.model.predict(&batch)?;
    let identical = a
        .iter()
        .zip(&b)
        .all(|(x, y)| x.to_bits() == y.to_bits());
    println!("predictions bit-identical to the in-memory model: {identical}");

    // Second leg: raise the epoch cap and keep training from where the
    // checkpoint left off.
    let mut resumed = resumed;
    resumed.extend_epochs(6);
    let second = resumed.fit(&data, Some(dir.path()))?;
    println!(
        "second leg: {} more epochs, best mean validation AUC {:.4}",
        second.epochs.len(),
        second.best_avg_val_auc
    );
    Ok(())
}
