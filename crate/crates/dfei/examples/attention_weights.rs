//! Shows the per-sample attention weights that mix the domain features
//! into each prediction.
//!
//! Every sample scores all domains' feature vectors against its own
//! representation, so two users in the same domain can draw on different
//! neighbor domains. This example averages the weights per serving domain
//! and prints a few individual samples to show the spread.
//!
//! ```sh
//! cargo run --release --example attention_weights
//! ```

use dfei::data::{gen_synthetic, Batch, Split, SyntheticSpec};
use dfei::model::{DfeiModel, ModelConfig};
use dfei::rng;
use dfei::train::{TrainConfig, Trainer};

fn main() -> dfei::Result<()> {
    let spec = SyntheticSpec {
        domains: 4,
        users: 120,
        items: 100,
        fields: 4,
        samples_per_domain: vec![2500, 2000, 2500, 2000],
        target_ctrs: vec![0.04, 0.06, 0.09, 0.12],
        signal_strength: 1.0,
        domain_groups: Some(vec![0, 0, 1, 1]),
        context_vocab: 10,
        latent_dim: 6,
        score_scale: 3.0,
        seed: 29,
    };
    let data = gen_synthetic(&spec)?;

    let mut mc = ModelConfig::new(
        data.num_domains(),
        data.schema.num_fields(),
        data.schema.vocab_sizes(),
    );
    mc.embed_dim = 6;
    mc.tower_dims = vec![16, 8];
    mc.dropout_rates = vec![0.0, 0.0];
    mc.attention_dim = 8;
    mc.head_dims = vec![8];
    let model = DfeiModel::new(mc, 29)?;

    let tc = TrainConfig { batch_size: 256, learning_rate: 2e-3, epochs: 4, ..Default::default() };
    let mut trainer = Trainer::new(model, tc, &data)?;
    trainer.fit(&data, None)?;
    let model = &trainer.model;

    let d_count = data.num_domains();
    let mut eval_rng = rng::stream(0, "dropout", "eval");

    println!("mean attention weight over each domain's feature vector");
    print!("serving domain ");
    for j in 0..d_count {
        print!("    d{j}  ");
    }
    println!();
    for d in 0..d_count {
        let rows = data.split(d, Split::Test)?;
        let take = rows.len().min(256);
        let batch = Batch::assemble(rows, &(0..take).collect::<Vec<_>>())?;
        let fwd = model.forward(&batch, false, &mut eval_rng)?;
        let w = fwd.attention.expect("the full variant always computes attention");
        let b = w.shape()[0];
        print!("  d{d}          ");
        for j in 0..d_count {
            let mean: f64 = (0..b).map(|i| w.data()[i * d_count + j]).sum::<f64>() / b as f64;
            print!(" {mean:.3} ");
        }
        println!();

        if d == 0 {
            println!("    first three samples of d0, individually:");
            for i in 0..3.min(b) {
                let row: Vec<String> = (0..d_count)
                    .map(|j| format!("{:.3}", w.data()[i * d_count + j]))
                    .collect();
                println!("      sample {i}: [{}]", row.join(", "));
            }
        }
    }
    println!("\n(weights in each row vary per sample but sum to 1)");
    Ok(())
}
