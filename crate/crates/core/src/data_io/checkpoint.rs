//! Binary checkpoint: magic, version, JSON metadata, named f64 tensors and
//! a trailing CRC32 of everything before it. All integers little-endian.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::VesselKind;
use crate::model::{WNetConfig, WNetModel};
use crate::preprocess::PreprocessConfig;
use crate::tensor::Tensor;
use crate::train::TrainConfig;

pub const MAGIC: [u8; 4] = *b"AVWN";
pub const VERSION: u32 = 1;

/// Everything needed to rebuild and audit a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: WNetConfig,
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub vessel_kind: Option<VesselKind>,
    pub seed: u64,
    #[serde(default)]
    pub best_epoch: Option<usize>,
    /// CRC32 (hex) of the deterministic loss log of the run.
    #[serde(default)]
    pub log_digest: Option<String>,
    #[serde(default)]
    pub stop_alpha: bool,
}

impl CheckpointMeta {
    pub fn for_model(model: &WNetModel, seed: u64) -> Self {
        Self {
            model: model.config().clone(),
            preprocess: model.preprocess.clone(),
            train: None,
            vessel_kind: None,
            seed,
            best_epoch: None,
            log_digest: None,
            stop_alpha: model.stop_alpha,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StoredParam {
    pub name: String,
    pub trainable: bool,
    pub value: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: Vec<StoredParam>,
}

pub fn digest(bytes: &[u8]) -> String {
    format!("{:08x}", crc32fast::hash(bytes))
}

impl Checkpoint {
    pub fn from_model(model: &WNetModel, meta: CheckpointMeta) -> Self {
        let params = model
            .params
            .iter()
            .map(|(_, p)| StoredParam {
                name: p.name.clone(),
                trainable: p.trainable,
                value: p.value.clone(),
            })
            .collect();
        Self { meta, params }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta)?;
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.push(u8::from(p.trainable));
            out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
            for &d in p.value.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 8 || bytes[..4] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
        let actual = crc32fast::hash(body);
        if stored != actual {
            return Err(Error::Checkpoint(format!(
                "checksum mismatch (stored {stored:08x}, computed {actual:08x}); file is truncated or corrupt"
            )));
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}, expected {VERSION}")));
        }
        let meta_len = r.u64()? as usize;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?)?;
        let count = r.u32()? as usize;
        let mut params = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
            let trainable = match r.take(1)?[0] {
                0 => false,
                1 => true,
                b => return Err(Error::Checkpoint(format!("`{name}`: bad trainable flag {b}"))),
            };
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let numel = numel
                .filter(|n| n.checked_mul(8).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| Error::Checkpoint(format!("`{name}`: shape {shape:?} exceeds file size")))?;
            let raw = r.take(numel * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            params.push(StoredParam {
                name,
                trainable,
                value: Tensor::new(shape, data)?,
            });
        }
        if r.remaining() != 0 {
            return Err(Error::Checkpoint(format!("{} trailing bytes after parameters", r.remaining())));
        }
        Ok(Self { meta, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.encode()?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    /// Copies the stored tensors into an existing model. Fails with
    /// [`Error::ParamShape`] naming the first parameter whose shape differs.
    pub fn load_into(&self, model: &mut WNetModel) -> Result<()> {
        let pairs: Vec<(String, Tensor)> = self.params.iter().map(|p| (p.name.clone(), p.value.clone())).collect();
        model.params.load_from(&pairs)?;
        model.stop_alpha = self.meta.stop_alpha;
        Ok(())
    }

    /// Rebuilds the model described by the metadata.
    pub fn build_model(&self) -> Result<WNetModel> {
        let mut model = WNetModel::new(self.meta.model.clone(), self.meta.preprocess.clone(), self.meta.seed)?;
        self.load_into(&mut model)?;
        Ok(model)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Checkpoint(format!("unexpected end of data at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::random_tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(seed: u64) -> WNetModel {
        WNetModel::new(WNetConfig::new(2, 2, true), PreprocessConfig::default(), seed).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let model = tiny(1);
        let mut meta = CheckpointMeta::for_model(&model, 1);
        meta.best_epoch = Some(4);
        meta.log_digest = Some(digest(b"epoch,train,val\n"));
        let bytes = Checkpoint::from_model(&model, meta.clone()).encode().unwrap();
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back.meta, meta);
        let mut other = tiny(2);
        back.load_into(&mut other).unwrap();
        let x = random_tensor(&mut ChaCha8Rng::seed_from_u64(3), &[1, 3, 8, 8]);
        let (a1, a2) = model.predict(&x).unwrap();
        let (b1, b2) = other.predict(&x).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a1), bits(&b1));
        assert_eq!(bits(&a2), bits(&b2));
        assert_eq!(back.encode().unwrap(), bytes);
    }

    #[test]
    fn corruption_is_detected() {
        let model = tiny(1);
        let bytes = Checkpoint::from_model(&model, CheckpointMeta::for_model(&model, 1)).encode().unwrap();
        for cut in [bytes.len() - 1, bytes.len() / 2, 10] {
            let err = Checkpoint::decode(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::Checkpoint(ref m) if m.contains("checksum") || m.contains("magic")), "{err}");
        }
        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        assert!(Checkpoint::decode(&flipped).is_err());
        assert!(Checkpoint::decode(b"PNG\x89 nope").is_err());
    }

    #[test]
    fn version_mismatch_rejected() {
        let model = tiny(1);
        let mut bytes = Checkpoint::from_model(&model, CheckpointMeta::for_model(&model, 1)).encode().unwrap();
        bytes[4] = 9;
        let n = bytes.len() - 4;
        let crc = crc32fast::hash(&bytes[..n]);
        bytes[n..].copy_from_slice(&crc.to_le_bytes());
        let err = Checkpoint::decode(&bytes).unwrap_err();
        assert!(err.to_string().contains("version 9"));
    }

    #[test]
    fn mismatched_architecture_names_parameter() {
        let small = tiny(1);
        let ckpt = Checkpoint::from_model(&small, CheckpointMeta::for_model(&small, 1));
        let mut wide = WNetModel::new(WNetConfig::new(2, 4, true), PreprocessConfig::default(), 1).unwrap();
        match ckpt.load_into(&mut wide).unwrap_err() {
            Error::ParamShape { name, expected, found } => {
                assert!(name.starts_with("phi1"), "{name}");
                assert_ne!(expected, found);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn file_round_trip_rebuilds_model() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/model.ckpt");
        let model = tiny(5);
        Checkpoint::from_model(&model, CheckpointMeta::for_model(&model, 5)).save(&path).unwrap();
        let rebuilt = Checkpoint::load(&path).unwrap().build_model().unwrap();
        assert_eq!(rebuilt.params, model.params);
        assert!(Checkpoint::load(&dir.path().join("missing")).is_err());
    }
}
