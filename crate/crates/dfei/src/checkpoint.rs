//! Binary checkpoints that capture a training run completely: parameters,
//! optimizer moments, the domain-feature bank, batch-cycler positions, and
//! the dropout RNG — enough to resume bit-for-bit.
//!
//! Layout: magic `DFEICKPT`, a little-endian u64 header length, a JSON
//! header, the raw little-endian f64 payload the header's tensor directory
//! indexes into, and a trailing SHA-256 over everything before it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{BatchCycler, DatasetSchema, DomainDataset, Fnv, Split};
use crate::error::{Error, Result};
use crate::model::{DfeiModel, DomainFeatureBank, ModelConfig};
use crate::optim::{Adam, AdamConfig, AdamState};
use crate::rng;
use crate::tensor::Tensor;
use crate::train::{TrainConfig, Trainer};

const MAGIC: &[u8; 8] = b"DFEICKPT";
const VERSION: u32 = 1;
const SHA_LEN: usize = 32;

/// What a payload tensor is: a parameter or one of its Adam moments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum TensorKind {
    Param,
    AdamM,
    AdamV,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    kind: TensorKind,
    scope: String,
    is_weight: bool,
    shape: Vec<usize>,
    /// Index of the first value inside the f64 payload.
    offset: u64,
    count: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BankState {
    decay: f64,
    dim: usize,
    vectors: Vec<Vec<f64>>,
    initialized: Vec<bool>,
    steps: Vec<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    model: ModelConfig,
    schema: DatasetSchema,
    train: TrainConfig,
    global_step: u64,
    epoch: u64,
    /// Best mean validation AUC; absent when no epoch has been scored yet.
    best_metric: Option<f64>,
    tensors: Vec<TensorEntry>,
    /// Per-parameter Adam step counters, parallel to the moment tensors.
    adam_steps: Vec<(String, u64)>,
    bank: Option<BankState>,
    /// (completed shuffles, cursor) per domain cycler.
    cyclers: Vec<(u64, usize)>,
    /// Dropout stream position, a u128 in decimal (JSON numbers cannot
    /// carry it exactly).
    dropout_word_pos: String,
    /// Running batch-sequence hash at save time.
    batch_audit: u64,
}

/// Serializes the trainer's complete state to `path`.
pub fn save(trainer: &Trainer, schema: &DatasetSchema, path: &Path) -> Result<()> {
    write_with_version(trainer, schema, path, VERSION)
}

/// Version-parameterized writer; tests use it to forge future versions.
pub(crate) fn write_with_version(
    trainer: &Trainer,
    schema: &DatasetSchema,
    path: &Path,
    version: u32,
) -> Result<()> {
    let mut payload: Vec<f64> = Vec::new();
    let mut tensors = Vec::new();
    let mut adam_steps = Vec::new();

    let mut push = |payload: &mut Vec<f64>, name: &str, kind, scope: String, is_weight, t: &Tensor| {
        tensors.push(TensorEntry {
            name: name.to_string(),
            kind,
            scope,
            is_weight,
            shape: t.shape().to_vec(),
            offset: payload.len() as u64,
            count: t.len() as u64,
        });
        payload.extend_from_slice(t.data());
    };

    for (name, param) in trainer.model.params.iter() {
        push(
            &mut payload,
            name,
            TensorKind::Param,
            param.scope.tag(),
            param.is_weight,
            &param.value,
        );
        if let Some(state) = trainer.optimizer.state(name) {
            let scope = param.scope.tag();
            push(&mut payload, name, TensorKind::AdamM, scope.clone(), false, &state.m);
            push(&mut payload, name, TensorKind::AdamV, scope, false, &state.v);
            adam_steps.push((name.clone(), state.t));
        }
    }

    let bank = trainer.model.bank().map(|b| {
        let (vectors, initialized, steps) = b.parts();
        BankState {
            decay: b.decay(),
            dim: b.dim(),
            vectors: vectors.to_vec(),
            initialized: initialized.to_vec(),
            steps: steps.to_vec(),
        }
    });

    let header = Header {
        version,
        model: trainer.model.config().clone(),
        schema: schema.clone(),
        train: trainer.config().clone(),
        global_step: trainer.global_step(),
        epoch: trainer.epoch(),
        best_metric: (trainer.best_metric().is_finite()).then(|| trainer.best_metric()),
        tensors,
        adam_steps,
        bank,
        cyclers: trainer.cyclers.iter().map(|c| c.state()).collect(),
        dropout_word_pos: trainer.dropout_rng.get_word_pos().to_string(),
        batch_audit: trainer.audit.finish(),
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| Error::Checkpoint(format!("serializing header: {e}")))?;

    let mut bytes =
        Vec::with_capacity(MAGIC.len() + 8 + header_bytes.len() + payload.len() * 8 + SHA_LEN);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header_bytes);
    for v in &payload {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&bytes);
    bytes.extend_from_slice(&digest);

    fs::write(path, &bytes)
        .map_err(|e| Error::io(format!("writing checkpoint {}: {e}", path.display())))?;
    Ok(())
}

/// Rebuilds a trainer from `path`, verifying integrity first and then that
/// `data` carries exactly the schema the checkpoint was trained on.
pub fn load(path: &Path, data: &DomainDataset) -> Result<Trainer> {
    let bytes = fs::read(path)
        .map_err(|e| Error::io(format!("reading checkpoint {}: {e}", path.display())))?;
    if bytes.len() < MAGIC.len() + 8 + SHA_LEN {
        return Err(Error::Checkpoint(format!(
            "{} is too short to be a checkpoint",
            path.display()
        )));
    }
    let (body, stored_sha) = bytes.split_at(bytes.len() - SHA_LEN);
    let digest = Sha256::digest(body);
    if digest.as_slice() != stored_sha {
        return Err(Error::Checkpoint(format!(
            "{} failed its integrity check: stored and computed SHA-256 differ",
            path.display()
        )));
    }
    if &body[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint file", path.display())));
    }
    let header_len =
        u64::from_le_bytes(body[MAGIC.len()..MAGIC.len() + 8].try_into().unwrap()) as usize;
    let header_start = MAGIC.len() + 8;
    let payload_start = header_start + header_len;
    if payload_start > body.len() {
        return Err(Error::Checkpoint(format!(
            "{} declares a {header_len}-byte header but only {} bytes follow",
            path.display(),
            body.len() - header_start
        )));
    }
    let header: Header = serde_json::from_slice(&body[header_start..payload_start])
        .map_err(|e| Error::Checkpoint(format!("{}: malformed header: {e}", path.display())))?;
    if header.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "{} is version {}, this build reads version {VERSION}",
            path.display(),
            header.version
        )));
    }
    if header.schema != data.schema {
        return Err(Error::Checkpoint(format!(
            "{} was trained on a different dataset (schema fingerprint {:016x}, \
             this dataset {:016x})",
            path.display(),
            header.schema.fingerprint(),
            data.schema.fingerprint()
        )));
    }

    let payload_bytes = &body[payload_start..];
    if payload_bytes.len() % 8 != 0 {
        return Err(Error::Checkpoint(format!(
            "{}: payload length {} is not a multiple of 8",
            path.display(),
            payload_bytes.len()
        )));
    }
    let payload: Vec<f64> = payload_bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let read_tensor = |e: &TensorEntry| -> Result<Tensor> {
        let start = e.offset as usize;
        let end = start + e.count as usize;
        if end > payload.len() {
            return Err(Error::Checkpoint(format!(
                "tensor `{}` points past the payload ({end} > {})",
                e.name,
                payload.len()
            )));
        }
        Tensor::from_vec(&e.shape, payload[start..end].to_vec())
    };

    // Rebuild the model shell, then overwrite every tensor from the payload.
    let mut model = DfeiModel::new(header.model.clone(), header.train.seed)?;
    let stored_params: Vec<&TensorEntry> =
        header.tensors.iter().filter(|e| e.kind == TensorKind::Param).collect();
    if stored_params.len() != model.params.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint stores {} parameters, the rebuilt model has {}",
            stored_params.len(),
            model.params.len()
        )));
    }
    for entry in &stored_params {
        model.params.set_tensor(&entry.name, read_tensor(entry)?)?;
    }

    if let Some(b) = &header.bank {
        let bank = DomainFeatureBank::from_parts(
            b.decay,
            b.dim,
            b.vectors.clone(),
            b.initialized.clone(),
            b.steps.clone(),
        )?;
        model.set_bank(bank)?;
    }

    let mut optimizer = Adam::new(AdamConfig::default());
    let steps: std::collections::HashMap<&str, u64> =
        header.adam_steps.iter().map(|(n, t)| (n.as_str(), *t)).collect();
    for entry in header.tensors.iter().filter(|e| e.kind == TensorKind::AdamM) {
        let m = read_tensor(entry)?;
        let v_entry = header
            .tensors
            .iter()
            .find(|e| e.kind == TensorKind::AdamV && e.name == entry.name)
            .ok_or_else(|| {
                Error::Checkpoint(format!("parameter `{}` has an m moment but no v", entry.name))
            })?;
        let v = read_tensor(v_entry)?;
        let t = *steps.get(entry.name.as_str()).ok_or_else(|| {
            Error::Checkpoint(format!("parameter `{}` has moments but no step count", entry.name))
        })?;
        optimizer.restore(&model.params, &entry.name, AdamState { m, v, t })?;
    }

    if header.cyclers.len() != data.num_domains() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} batch cyclers, dataset has {} domains",
            header.cyclers.len(),
            data.num_domains()
        )));
    }
    let mut cyclers = Vec::with_capacity(header.cyclers.len());
    for (d, &(passes, cursor)) in header.cyclers.iter().enumerate() {
        let n = data.split(d, Split::Train)?.len();
        cyclers.push(BatchCycler::restore(n, header.train.seed, d, passes, cursor)?);
    }

    let word_pos: u128 = header.dropout_word_pos.parse().map_err(|_| {
        Error::Checkpoint(format!(
            "invalid dropout stream position {:?}",
            header.dropout_word_pos
        ))
    })?;
    let mut dropout_rng = rng::stream(header.train.seed, "dropout", "train");
    dropout_rng.set_word_pos(word_pos);

    Ok(Trainer::assemble(
        model,
        optimizer,
        header.train,
        cyclers,
        dropout_rng,
        header.global_step,
        header.epoch,
        header.best_metric.unwrap_or(f64::NEG_INFINITY),
        Fnv::resume(header.batch_audit),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, Batch, SyntheticSpec};
    use crate::model::ModelConfig;

    fn spec() -> SyntheticSpec {
        SyntheticSpec {
            domains: 2,
            users: 50,
            items: 40,
            fields: 3,
            samples_per_domain: vec![300, 200],
            target_ctrs: vec![0.25, 0.5],
            signal_strength: 1.5,
            domain_groups: Some(vec![0, 1]),
            context_vocab: 8,
            latent_dim: 4,
            score_scale: 3.0,
            seed: 21,
        }
    }

    fn build_trainer(data: &DomainDataset) -> Trainer {
        let mut mc = ModelConfig::new(
            data.num_domains(),
            data.schema.num_fields(),
            data.schema.vocab_sizes(),
        );
        mc.embed_dim = 4;
        mc.tower_dims = vec![8, 4];
        // Nonzero dropout makes RNG-position restoration load-bearing.
        mc.dropout_rates = vec![0.1, 0.2];
        mc.attention_dim = 4;
        mc.head_dims = vec![4];
        let model = DfeiModel::new(mc, 5).unwrap();
        let tc = TrainConfig { batch_size: 64, epochs: 4, seed: 7, ..TrainConfig::default() };
        Trainer::new(model, tc, data).unwrap()
    }

    fn param_bits(t: &Trainer) -> Vec<(String, Vec<u64>)> {
        t.model
            .params
            .iter()
            .map(|(n, p)| (n.clone(), p.value.data().iter().map(|x| x.to_bits()).collect()))
            .collect()
    }

    #[test]
    fn round_trip_preserves_all_state_bitwise() {
        let data = gen_synthetic(&spec()).unwrap();
        let mut trainer = build_trainer(&data);
        trainer.warm_up(&data).unwrap();
        for _ in 0..3 {
            for d in 0..2 {
                trainer.train_step_domain(&data, d).unwrap();
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        trainer.save_checkpoint(&path, &data.schema).unwrap();
        let restored = Trainer::resume(&path, &data).unwrap();

        assert_eq!(param_bits(&trainer), param_bits(&restored));
        assert_eq!(restored.global_step(), trainer.global_step());
        assert_eq!(restored.epoch(), trainer.epoch());
        assert_eq!(restored.batch_audit(), trainer.batch_audit());
        let (b1, b2) = (trainer.model.bank().unwrap(), restored.model.bank().unwrap());
        assert_eq!(b1.parts().0, b2.parts().0);
        assert_eq!(b1.parts().2, b2.parts().2);

        let s1 = trainer.optimizer().state("shared_tower.l0.w").unwrap();
        let s2 = restored.optimizer().state("shared_tower.l0.w").unwrap();
        assert_eq!(s1.t, s2.t);
        assert_eq!(s1.m.data(), s2.m.data());
        assert_eq!(s1.v.data(), s2.v.data());

        let samples = data.split(0, Split::Train).unwrap();
        let batch = Batch::assemble(samples, &(0..32).collect::<Vec<_>>()).unwrap();
        assert_eq!(
            trainer.model.predict(&batch).unwrap(),
            restored.model.predict(&batch).unwrap()
        );
    }

    #[test]
    fn resumed_training_matches_uninterrupted_training_exactly() {
        let data = gen_synthetic(&spec()).unwrap();
        let mut uninterrupted = build_trainer(&data);
        uninterrupted.warm_up(&data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mid.bin");

        for step in 0..5 {
            if step == 3 {
                uninterrupted.save_checkpoint(&path, &data.schema).unwrap();
            }
            for d in 0..2 {
                uninterrupted.train_step_domain(&data, d).unwrap();
            }
        }

        let mut resumed = Trainer::resume(&path, &data).unwrap();
        for _ in 3..5 {
            for d in 0..2 {
                resumed.train_step_domain(&data, d).unwrap();
            }
        }

        assert_eq!(param_bits(&uninterrupted), param_bits(&resumed));
        assert_eq!(uninterrupted.batch_audit(), resumed.batch_audit());
        assert_eq!(
            uninterrupted.model.bank().unwrap().parts().0,
            resumed.model.bank().unwrap().parts().0
        );
    }

    #[test]
    fn tampering_is_detected() {
        let data = gen_synthetic(&spec()).unwrap();
        let mut trainer = build_trainer(&data);
        trainer.warm_up(&data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        trainer.save_checkpoint(&path, &data.schema).unwrap();

        let mut bytes = fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x01;
        fs::write(&path, &bytes).unwrap();
        let err = Trainer::resume(&path, &data).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)), "{err}");
        assert!(err.to_string().contains("integrity"), "{err}");

        fs::write(&path, &bytes[..10]).unwrap();
        let err = Trainer::resume(&path, &data).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)), "{err}");
    }

    #[test]
    fn unsupported_versions_are_rejected() {
        let data = gen_synthetic(&spec()).unwrap();
        let mut trainer = build_trainer(&data);
        trainer.warm_up(&data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("future.bin");
        write_with_version(&trainer, &data.schema, &path, 99).unwrap();
        let err = Trainer::resume(&path, &data).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }

    #[test]
    fn checkpoints_refuse_mismatched_datasets() {
        let data = gen_synthetic(&spec()).unwrap();
        let mut trainer = build_trainer(&data);
        trainer.warm_up(&data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        trainer.save_checkpoint(&path, &data.schema).unwrap();

        let mut other_spec = spec();
        other_spec.context_vocab = 4;
        other_spec.users = 30;
        let other = gen_synthetic(&other_spec).unwrap();
        let err = Trainer::resume(&path, &other).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)), "{err}");
        assert!(err.to_string().contains("different dataset"), "{err}");
    }
}
