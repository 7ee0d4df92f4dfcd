//! Binary checkpoint: `"RTHN"`, `u32` version, `u32`-length-prefixed UTF-8
//! config text, `u32` tensor count, then per tensor a `u32`-length-prefixed
//! name, `u32` rank, `u32` dims and the `f32` payload. All integers and
//! floats are little-endian.
//!
//! The config text is the training config plus `state.*` keys holding the
//! epoch counter, best validation score, numeric mode and generator state.
//! Tensor names are prefixed `param:`, `buffer:` or `velocity:`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::network::Model;
use crate::scalar::{Precision, Scalar};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"RTHN";
pub const VERSION: u32 = 1;

/// Serializable position of a ChaCha8 generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub precision: Precision,
    /// Completed epochs.
    pub epoch: usize,
    pub best_val_miou: Option<f64>,
    pub rng: RngState,
    pub params: BTreeMap<String, Tensor<f32>>,
    pub buffers: BTreeMap<String, Tensor<f32>>,
    pub velocities: BTreeMap<String, Tensor<f32>>,
}

fn cast_map<T: Scalar, U: Scalar>(m: &BTreeMap<String, Tensor<T>>) -> BTreeMap<String, Tensor<U>> {
    m.iter().map(|(k, t)| (k.clone(), t.cast())).collect()
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<[u8; 32]> {
    if s.len() != 64 || !s.is_ascii() {
        return None;
    }
    let mut out = [0u8; 32];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).ok()?;
    }
    Some(out)
}

impl Checkpoint {
    /// Snapshot of a model and its optimizer state. `f64` values are rounded
    /// to `f32`.
    pub fn capture<T: Scalar>(
        config: &TrainConfig,
        model: &Model<T>,
        velocities: &BTreeMap<String, Tensor<T>>,
        epoch: usize,
        best_val_miou: Option<f64>,
        rng: &ChaCha8Rng,
    ) -> Self {
        Checkpoint {
            config: config.clone(),
            precision: Precision::of::<T>(),
            epoch,
            best_val_miou,
            rng: RngState::capture(rng),
            params: cast_map(model.params()),
            buffers: cast_map(model.buffers()),
            velocities: cast_map(velocities),
        }
    }

    pub fn model<T: Scalar>(&self) -> Result<Model<T>> {
        Model::from_parts(self.config.seeded_model(), cast_map(&self.params), cast_map(&self.buffers))
    }

    pub fn velocities<T: Scalar>(&self) -> BTreeMap<String, Tensor<T>> {
        cast_map(&self.velocities)
    }

    fn config_text(&self) -> String {
        let mut kv = self.config.to_kv();
        kv.set("state.epoch", self.epoch);
        kv.set(
            "state.best_val_miou",
            self.best_val_miou.map_or_else(|| "none".to_string(), |v| v.to_string()),
        );
        kv.set("state.precision", self.precision.name());
        kv.set("state.rng_seed", hex(&self.rng.seed));
        kv.set("state.rng_stream", self.rng.stream);
        kv.set("state.rng_word_pos", self.rng.word_pos);
        kv.to_text()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let text = self.config_text();
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        let groups = [("param", &self.params), ("buffer", &self.buffers), ("velocity", &self.velocities)];
        let count: usize = groups.iter().map(|(_, m)| m.len()).sum();
        out.extend_from_slice(&(count as u32).to_le_bytes());
        for (prefix, map) in groups {
            for (name, t) in map {
                let full = format!("{prefix}:{name}");
                out.extend_from_slice(&(full.len() as u32).to_le_bytes());
                out.extend_from_slice(full.as_bytes());
                out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
                for &d in t.shape() {
                    out.extend_from_slice(&(d as u32).to_le_bytes());
                }
                for &v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    /// Decodes a checkpoint. Every failure, including an invalid stored
    /// config, is reported as [`Error::Checkpoint`].
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::decode(bytes).map_err(|e| match e {
            Error::Checkpoint(_) => e,
            other => Error::Checkpoint(other.to_string()),
        })
    }

    fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (this build reads {VERSION})"
            )));
        }
        let len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("config text is not UTF-8".into()))?;
        let kv = KvMap::parse(text)?;

        let mut params = BTreeMap::new();
        let mut buffers = BTreeMap::new();
        let mut velocities = BTreeMap::new();
        let count = r.u32()?;
        for _ in 0..count {
            let at = r.pos;
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Checkpoint(format!("tensor name at byte {at} is not UTF-8")))?
                .to_string();
            let rank = r.u32()? as usize;
            if rank > 8 {
                return Err(Error::Checkpoint(format!("{name}: implausible rank {rank}")));
            }
            let shape: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
            let numel: usize = shape.iter().product();
            let payload = r.take(numel.checked_mul(4).ok_or_else(|| Error::Checkpoint(format!("{name}: size overflow")))?)?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
            let (map, key) = match name.split_once(':') {
                Some(("param", k)) => (&mut params, k),
                Some(("buffer", k)) => (&mut buffers, k),
                Some(("velocity", k)) => (&mut velocities, k),
                _ => return Err(Error::Checkpoint(format!("unrecognised tensor record {name:?}"))),
            };
            if map.insert(key.to_string(), t).is_some() {
                return Err(Error::Checkpoint(format!("duplicate tensor {name:?}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }

        let ck_err = |k: &str| Error::Checkpoint(format!("missing or invalid {k}"));
        let best = match kv.raw("state.best_val_miou") {
            None | Some("none") => None,
            Some(v) => Some(v.parse().map_err(|_| ck_err("state.best_val_miou"))?),
        };
        let precision = kv
            .raw("state.precision")
            .and_then(Precision::parse)
            .ok_or_else(|| ck_err("state.precision"))?;
        let seed = kv.raw("state.rng_seed").and_then(unhex).ok_or_else(|| ck_err("state.rng_seed"))?;
        let epoch = kv.get("state.epoch")?.ok_or_else(|| ck_err("state.epoch"))?;
        let stream = kv.get("state.rng_stream")?.ok_or_else(|| ck_err("state.rng_stream"))?;
        let word_pos = kv.get("state.rng_word_pos")?.ok_or_else(|| ck_err("state.rng_word_pos"))?;
        Ok(Checkpoint {
            config: TrainConfig::from_kv(&kv)?,
            precision,
            epoch,
            best_val_miou: best,
            rng: RngState { seed, stream, word_pos },
            params,
            buffers,
            velocities,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!(
                "truncated at byte {}: need {n} more bytes, {} left",
                self.pos,
                self.bytes.len() - self.pos
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
