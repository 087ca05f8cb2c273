//! Scratch calibration harness (not shipped): measures generator ceilings and
//! runs ablation probes on candidate default-spec settings.
use dfei::data::{gen_synthetic, Split, SyntheticSpec};
use dfei::eval::{auc, run_ablation};
use dfei::model::ModelConfig;
use dfei::rng;
use dfei::train::TrainConfig;
use rand::Rng;
use std::time::Instant;

fn arg<T: std::str::FromStr>(name: &str, default: T) -> T {
    let args: Vec<String> = std::env::args().collect();
    for i in 0..args.len() {
        if args[i] == name {
            if let Some(v) = args.get(i + 1) {
                if let Ok(p) = v.parse() {
                    return p;
                }
            }
        }
    }
    default
}

fn arg_list(name: &str, default: &[u64]) -> Vec<u64> {
    let args: Vec<String> = std::env::args().collect();
    for i in 0..args.len() {
        if args[i] == name {
            if let Some(v) = args.get(i + 1) {
                return v.split(',').map(|s| s.parse().unwrap()).collect();
            }
        }
    }
    default.to_vec()
}

fn candidate_spec() -> SyntheticSpec {
    let mut spec = SyntheticSpec::default();
    spec.users = arg("--users", 600);
    spec.items = arg("--items", 400);
    spec.latent_dim = arg("--latent", 4);
    spec.score_scale = arg("--scale", 3.0);
    spec.fields = arg("--fields", 6);
    spec.context_vocab = arg("--ctxvocab", 50);
    let samples: String = arg("--samples", "50,35,25,18,12,10".to_string());
    spec.samples_per_domain = samples.split(',').map(|s| s.parse::<usize>().unwrap() * 1000).collect();
    let grouping: String = arg("--groups", "pair".to_string());
    spec.domain_groups = match grouping.as_str() {
        "pair" => Some(vec![0, 1, 2, 0, 1, 2]),
        "pair2" => Some(vec![0, 1, 0, 1, 0, 1]),
        "block" => Some(vec![0, 0, 1, 1, 2, 2]),
        "none" => None,
        _ => panic!("unknown grouping"),
    };
    spec
}

/// Replicates the generator's latent draws and scores the test split with
/// (a) the true domain-aware scorer and (b) the exposure-weighted pooled
/// scorer, giving the two AUC ceilings the trained models sit under.
fn ceilings(spec: &SyntheticSpec) -> dfei::Result<()> {
    let m = spec.latent_dim;
    let normals = |name: &str, n: usize| -> Vec<f64> {
        let mut s = rng::stream(spec.seed, "gen", name);
        (0..n).map(|_| rng::normal(&mut s)).collect()
    };
    let users = normals("users", spec.users * m);
    let items = normals("items", spec.items * m);
    let shared = normals("w_shared", m * m);
    let groups: Vec<usize> = spec.domain_groups.clone().unwrap_or_else(|| (0..spec.domains).collect());
    let mut group_mats: std::collections::BTreeMap<usize, Vec<f64>> = Default::default();
    for &g in &groups {
        group_mats.entry(g).or_insert_with(|| normals(&format!("w_group{g}"), m * m));
    }
    let weights: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| shared.iter().zip(&group_mats[g]).map(|(s, w)| s + spec.signal_strength * w).collect())
        .collect();
    let total: usize = spec.samples_per_domain.iter().sum();
    let mut pooled = vec![0.0; m * m];
    for (d, w) in weights.iter().enumerate() {
        let share = spec.samples_per_domain[d] as f64 / total as f64;
        for (p, v) in pooled.iter_mut().zip(w) {
            *p += share * v;
        }
    }
    let bilinear = |p: &[f64], w: &[f64], q: &[f64]| -> f64 {
        let mut acc = 0.0;
        for j in 0..m {
            let mut row = 0.0;
            for k in 0..m {
                row += w[j * m + k] * q[k];
            }
            acc += p[j] * row;
        }
        acc / m as f64
    };
    let mut aware = Vec::new();
    let mut blind = Vec::new();
    for d in 0..spec.domains {
        let n = spec.samples_per_domain[d];
        let mut draw = rng::stream(spec.seed, "gen", &format!("impressions.d{d}"));
        let mut label_rng = rng::stream(spec.seed, "gen", &format!("labels.d{d}"));
        let mut train_scores = Vec::new();
        let mut rows = Vec::new();
        for i in 0..n {
            let u = draw.gen_range(0..spec.users);
            let v = draw.gen_range(0..spec.items);
            let s = spec.score_scale * bilinear(&users[u * m..(u + 1) * m], &weights[d], &items[v * m..(v + 1) * m]);
            let split = dfei::data::split_by_key(&format!("{d}:{i}"), spec.seed);
            if split == Split::Train {
                train_scores.push(s);
            }
            rows.push((u, v, s, split));
        }
        let bias = {
            // same bisection as the generator
            let mean_prob = |b: f64| -> f64 {
                train_scores.iter().map(|&s| 1.0 / (1.0 + (-(s + b)).exp())).sum::<f64>() / train_scores.len() as f64
            };
            let (mut lo, mut hi) = (-20.0, 20.0);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if mean_prob(mid) < spec.target_ctrs[d] {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        let mut scores_a = Vec::new();
        let mut scores_b = Vec::new();
        let mut labels = Vec::new();
        for (u, v, s, split) in rows {
            let p = 1.0 / (1.0 + (-(s + bias)).exp());
            let label = if label_rng.gen::<f64>() < p { 1.0 } else { 0.0 };
            if split == Split::Test {
                scores_a.push(s);
                scores_b.push(spec.score_scale * bilinear(&users[u * m..(u + 1) * m], &pooled, &items[v * m..(v + 1) * m]));
                labels.push(label);
            }
        }
        aware.push(auc(&scores_a, &labels)?);
        blind.push(auc(&scores_b, &labels)?);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!("domain-aware ceiling per-domain: {:?}", aware.iter().map(|a| (a * 1e4).round() / 1e4).collect::<Vec<_>>());
    println!("pooled ceiling per-domain:       {:?}", blind.iter().map(|a| (a * 1e4).round() / 1e4).collect::<Vec<_>>());
    println!("avg aware {:.4}  avg pooled {:.4}  gap {:.4}", mean(&aware), mean(&blind), mean(&aware) - mean(&blind));
    Ok(())
}

fn main() -> dfei::Result<()> {
    let stage: String = arg("--stage", "probe".to_string());
    let spec = candidate_spec();
    println!(
        "spec: users {} items {} latent {} scale {} groups {:?}",
        spec.users, spec.items, spec.latent_dim, spec.score_scale, spec.domain_groups
    );
    if stage == "ceiling" {
        return ceilings(&spec);
    }
    let data = gen_synthetic(&spec)?;
    for (d, splits) in data.domains.iter().enumerate() {
        println!(
            "  d{d}: train {} (ctr {:.4}) val {} test {}",
            splits.train.len(),
            data.train_ctr(d)?,
            splits.validation.len(),
            splits.test.len()
        );
    }
    let mut mc = ModelConfig::new(6, spec.fields, data.schema.vocab_sizes());
    mc.embed_dim = arg("--embed", 16);
    let towers: String = arg("--towers", "32,16".to_string());
    mc.tower_dims = towers.split(',').map(|s| s.parse().unwrap()).collect();
    let dropout: String = arg("--dropout", String::new());
    mc.dropout_rates = if dropout.is_empty() {
        vec![0.0; mc.tower_dims.len()]
    } else {
        dropout.split(',').map(|s| s.parse().unwrap()).collect()
    };
    mc.attention_dim = arg("--k", 16);
    let head: String = arg("--head", "32".to_string());
    mc.head_dims =
        if head == "none" { Vec::new() } else { head.split(',').map(|s| s.parse().unwrap()).collect() };
    mc.decay = arg("--decay", 0.9);
    let tc = TrainConfig {
        batch_size: arg("--batch", 512),
        learning_rate: arg("--lr", 3e-3),
        epochs: arg("--epochs", 8),
        ..Default::default()
    };
    let seeds = arg_list("--seeds", &[1]);
    println!(
        "model: embed {} towers {:?} k {} head {:?}  train: B {} lr {} epochs {}  seeds {:?}",
        mc.embed_dim, mc.tower_dims, mc.attention_dim, mc.head_dims, tc.batch_size, tc.learning_rate, tc.epochs, seeds
    );
    let t0 = Instant::now();
    let rep = run_ablation(&data, &mc, &tc, &seeds)?;
    println!("total {:.0}s", t0.elapsed().as_secs_f64());
    for m in &rep.mean_avg_auc {
        println!("  {:<11} {:.4}", m.variant, m.mean_avg_auc);
    }
    for vt in &rep.full_vs {
        println!("  vs {:<11} t {:+.2} p {:.4}", vt.variant, vt.test.t, vt.test.p);
    }
    println!("  audit {}", rep.batch_audit_consistent);
    for variant in ["full", "no_dfi", "no_dfei", "single_mlp"] {
        let row: Vec<String> = rep
            .cells
            .iter()
            .filter(|c| c.variant == variant)
            .map(|c| format!("{:.4}", c.avg_auc))
            .collect();
        println!("  {variant:<11} per-seed: {}", row.join(" "));
    }
    if std::env::args().any(|a| a == "--domains") {
        for cell in &rep.cells {
            let row: Vec<String> = cell
                .domain_auc
                .iter()
                .map(|a| a.map_or("  n/a ".to_string(), |a| format!("{a:.4}")))
                .collect();
            println!("  {:<11} seed {}: {}", cell.variant, cell.seed, row.join(" "));
        }
    }
    Ok(())
}
