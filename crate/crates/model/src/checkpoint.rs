//! Versioned checkpoint container. One file carries a stage tag, the full
//! model configuration, the dataset fingerprint it was trained on, the step
//! count, the vocabulary (generator stage only), and every named parameter
//! tensor. Loading reconstructs the architecture from the embedded config
//! and overwrites parameters by name, so a checkpoint is self-describing.

use crate::config::ModelConfig;
use crate::text::Vocabulary;
use crate::train::Mage;
use crate::vq::VqVae;
use crate::ModelError;
use byteorder::{ReadBytesExt, WriteBytesExt, LE};
use mage_autograd::params::ParamStore;
use ndarray::{ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"MAGECKPT";
const VERSION: u32 = 1;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Stage {
    /// Frame tokenizer (codebook autoencoder).
    Tokenizer,
    /// Caption-conditioned video generator.
    Generator,
}

impl Stage {
    fn to_byte(self) -> u8 {
        match self {
            Stage::Tokenizer => 1,
            Stage::Generator => 2,
        }
    }

    fn from_byte(b: u8) -> Result<Stage, ModelError> {
        match b {
            1 => Ok(Stage::Tokenizer),
            2 => Ok(Stage::Generator),
            other => Err(ModelError::Checkpoint(format!("unknown stage tag {other}"))),
        }
    }
}

pub struct Checkpoint {
    pub stage: Stage,
    pub config: ModelConfig,
    /// Fingerprint of the dataset the parameters were fitted on.
    pub fingerprint: String,
    pub step: u64,
    pub vocab: Option<Vocabulary>,
    pub params: Vec<(String, ArrayD<f32>)>,
}

pub fn save_checkpoint(
    path: &Path,
    stage: Stage,
    config: &ModelConfig,
    fingerprint: &str,
    step: u64,
    vocab: Option<&Vocabulary>,
    store: &ParamStore<f32>,
) -> Result<(), ModelError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LE>(VERSION)?;
    w.write_u8(stage.to_byte())?;
    w.write_u64::<LE>(step)?;
    write_blob(&mut w, serde_json::to_string(config)?.as_bytes())?;
    write_blob(&mut w, fingerprint.as_bytes())?;
    match vocab {
        Some(v) => write_blob(&mut w, serde_json::to_string(v)?.as_bytes())?,
        None => w.write_u32::<LE>(0)?,
    }
    w.write_u32::<LE>(store.len() as u32)?;
    for (_, name, value) in store.iter() {
        write_blob(&mut w, name.as_bytes())?;
        w.write_u32::<LE>(value.ndim() as u32)?;
        for &d in value.shape() {
            w.write_u64::<LE>(d as u64)?;
        }
        for &v in value.iter() {
            w.write_f32::<LE>(v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ModelError::Checkpoint(format!(
            "{} is not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let version = r.read_u32::<LE>()?;
    if version != VERSION {
        return Err(ModelError::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    let stage = Stage::from_byte(r.read_u8()?)?;
    let step = r.read_u64::<LE>()?;
    let config: ModelConfig = serde_json::from_slice(&read_blob(&mut r)?)?;
    let fingerprint = String::from_utf8(read_blob(&mut r)?)
        .map_err(|_| ModelError::Checkpoint("fingerprint is not UTF-8".into()))?;
    let vocab_blob = read_blob(&mut r)?;
    let vocab = if vocab_blob.is_empty() {
        None
    } else {
        Some(serde_json::from_slice(&vocab_blob)?)
    };
    let count = r.read_u32::<LE>()? as usize;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let name = String::from_utf8(read_blob(&mut r)?)
            .map_err(|_| ModelError::Checkpoint("parameter name is not UTF-8".into()))?;
        let rank = r.read_u32::<LE>()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.read_u64::<LE>()? as usize);
        }
        let n: usize = dims.iter().product();
        let mut data = vec![0f32; n];
        r.read_f32_into::<LE>(&mut data)?;
        let arr = ArrayD::from_shape_vec(IxDyn(&dims), data)
            .map_err(|e| ModelError::Checkpoint(format!("parameter {name}: {e}")))?;
        params.push((name, arr));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(ModelError::Checkpoint("trailing bytes after parameters".into()));
    }
    Ok(Checkpoint { stage, config, fingerprint, step, vocab, params })
}

impl Checkpoint {
    pub fn expect_stage(&self, want: Stage) -> Result<(), ModelError> {
        if self.stage != want {
            return Err(ModelError::Checkpoint(format!(
                "wrong checkpoint kind: holds {:?}, needed {:?}",
                self.stage, want
            )));
        }
        Ok(())
    }

    /// Copy saved tensors into a freshly initialized store by name. Every
    /// saved parameter must exist with the same shape, and none may be left
    /// uninitialized.
    fn restore_into(&self, store: &mut ParamStore<f32>) -> Result<(), ModelError> {
        if store.len() != self.params.len() {
            return Err(ModelError::Checkpoint(format!(
                "architecture mismatch: {} live parameters vs {} saved",
                store.len(),
                self.params.len()
            )));
        }
        for (name, value) in &self.params {
            let id = store.id_by_name(name).ok_or_else(|| {
                ModelError::Checkpoint(format!("saved parameter {name} has no slot in the model"))
            })?;
            if store.get(id).shape() != value.shape() {
                return Err(ModelError::Checkpoint(format!(
                    "parameter {name}: saved shape {:?} vs model shape {:?}",
                    value.shape(),
                    store.get(id).shape()
                )));
            }
            store.set(id, value.clone());
        }
        Ok(())
    }

    /// Rebuild the frame tokenizer this checkpoint was saved from.
    pub fn into_vqvae(&self) -> Result<(ParamStore<f32>, VqVae), ModelError> {
        self.expect_stage(Stage::Tokenizer)?;
        let mut store = ParamStore::new();
        // The rng only shapes the initialization that is about to be
        // overwritten; any seed yields the same architecture.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = VqVae::init(&mut store, &mut rng, &self.config);
        self.restore_into(&mut store)?;
        Ok((store, model))
    }

    /// Rebuild the full generator stack this checkpoint was saved from.
    pub fn into_mage(&self) -> Result<(ParamStore<f32>, Mage, Vocabulary), ModelError> {
        self.expect_stage(Stage::Generator)?;
        let vocab = self
            .vocab
            .clone()
            .ok_or_else(|| ModelError::Checkpoint("generator checkpoint lacks a vocabulary".into()))?;
        if vocab.size() != self.config.vocab_size {
            return Err(ModelError::Checkpoint(format!(
                "vocabulary of {} entries vs configured {}",
                vocab.size(),
                self.config.vocab_size
            )));
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = Mage::init(&mut store, &mut rng, &self.config);
        self.restore_into(&mut store)?;
        Ok((store, model, vocab))
    }
}

fn write_blob<W: Write>(w: &mut W, bytes: &[u8]) -> Result<(), ModelError> {
    w.write_u32::<LE>(bytes.len() as u32)?;
    w.write_all(bytes)?;
    Ok(())
}

fn read_blob<R: Read>(r: &mut R) -> Result<Vec<u8>, ModelError> {
    let len = r.read_u32::<LE>()? as usize;
    if len > 1 << 30 {
        return Err(ModelError::Checkpoint(format!("implausible blob length {len}")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mage_datagen::types::DatasetKind;

    fn tiny_cfg() -> ModelConfig {
        let mut cfg = ModelConfig::desk(DatasetKind::SingleMnist);
        cfg.image_side = 16;
        cfg.downsample = 4;
        cfg.codebook_size = 16;
        cfg.codebook_dim = 8;
        cfg
    }

    #[test]
    fn tokenizer_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg();
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let _ = VqVae::init(&mut store, &mut rng, &cfg);

        let p1 = dir.path().join("a.ckpt");
        save_checkpoint(&p1, Stage::Tokenizer, &cfg, "fp-123", 42, None, &store).unwrap();
        let ck = load_checkpoint(&p1).unwrap();
        assert_eq!(ck.stage, Stage::Tokenizer);
        assert_eq!(ck.step, 42);
        assert_eq!(ck.fingerprint, "fp-123");
        assert_eq!(ck.config, cfg);
        assert!(ck.vocab.is_none());

        let (restored, _model) = ck.into_vqvae().unwrap();
        let p2 = dir.path().join("b.ckpt");
        save_checkpoint(&p2, Stage::Tokenizer, &ck.config, &ck.fingerprint, ck.step, None, &restored)
            .unwrap();
        let b1 = std::fs::read(&p1).unwrap();
        let b2 = std::fs::read(&p2).unwrap();
        assert_eq!(b1, b2, "save -> load -> save must reproduce the file exactly");
    }

    #[test]
    fn generator_checkpoints_carry_their_vocabulary() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_cfg();
        cfg.d_model = 32;
        cfg.heads = 2;
        cfg.t_frames = 4;
        let vocab = Vocabulary::build(["the digit moves up", "the digit moves down"]).unwrap();
        cfg.vocab_size = vocab.size();
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let _ = Mage::init(&mut store, &mut rng, &cfg);

        let p = dir.path().join("gen.ckpt");
        save_checkpoint(&p, Stage::Generator, &cfg, "fp-9", 7, Some(&vocab), &store).unwrap();
        let ck = load_checkpoint(&p).unwrap();
        let (restored, _mage, v) = ck.into_mage().unwrap();
        assert_eq!(v.size(), vocab.size());
        assert_eq!(v.id_of("digit"), vocab.id_of("digit"));
        for (id, name, value) in store.iter() {
            assert_eq!(restored.get(id), value, "{name} changed across the round trip");
        }

        // A tokenizer loader must refuse a generator file.
        assert!(ck.into_vqvae().is_err());
    }

    #[test]
    fn corrupted_files_are_rejected_with_reasons() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg();
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let _ = VqVae::init(&mut store, &mut rng, &cfg);
        let p = dir.path().join("good.ckpt");
        save_checkpoint(&p, Stage::Tokenizer, &cfg, "fp", 1, None, &store).unwrap();
        let good = std::fs::read(&p).unwrap();

        let bad_magic = dir.path().join("magic.ckpt");
        let mut m = good.clone();
        m[0] ^= 0xff;
        std::fs::write(&bad_magic, &m).unwrap();
        assert!(matches!(load_checkpoint(&bad_magic), Err(ModelError::Checkpoint(_))));

        let bad_version = dir.path().join("version.ckpt");
        let mut v = good.clone();
        v[8] = 99;
        std::fs::write(&bad_version, &v).unwrap();
        assert!(matches!(load_checkpoint(&bad_version), Err(ModelError::Checkpoint(_))));

        let truncated = dir.path().join("trunc.ckpt");
        std::fs::write(&truncated, &good[..good.len() / 2]).unwrap();
        assert!(load_checkpoint(&truncated).is_err());

        let padded = dir.path().join("padded.ckpt");
        let mut pd = good.clone();
        pd.push(0);
        std::fs::write(&padded, &pd).unwrap();
        assert!(matches!(load_checkpoint(&padded), Err(ModelError::Checkpoint(_))));
    }

    #[test]
    fn architecture_drift_is_caught_on_restore() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg();
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let _ = VqVae::init(&mut store, &mut rng, &cfg);
        let p = dir.path().join("drift.ckpt");
        save_checkpoint(&p, Stage::Tokenizer, &cfg, "fp", 1, None, &store).unwrap();

        let mut ck = load_checkpoint(&p).unwrap();
        // Claim a different codebook width than the tensors actually have.
        ck.config.codebook_dim = 4;
        assert!(ck.into_vqvae().is_err(), "shape drift must not restore silently");
    }
}
