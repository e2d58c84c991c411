//! Named-tensor binary files.
//!
//! Layout (little-endian): `MGPC`, version `u32`, tensor count `u32`, then per
//! tensor a `u16` name length, the UTF-8 name, a `u8` rank, `u64` dims and the
//! `f32` payload in row-major order. A `u32`-length JSON trailer follows the
//! tensors; for model checkpoints it holds the architecture and the tokenizer
//! sidecar paths, which cannot be recovered from tensor shapes alone.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::ModelConfig;
use crate::error::{Error, Result};
use crate::model::MgpStr;
use crate::nn::{Module, ParamSet, Tensor};

pub const MAGIC: &[u8; 4] = b"MGPC";
pub const VERSION: u32 = 1;

/// Serializes tensors in the given order followed by the JSON trailer.
pub fn encode_tensors<'a>(
    tensors: impl IntoIterator<Item = (&'a str, &'a Tensor<f32>)>,
    trailer: &str,
) -> Result<Vec<u8>> {
    let tensors: Vec<_> = tensors.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(tensors.len())
        .map_err(|_| Error::Config("too many tensors for one checkpoint".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in tensors {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::Config(format!("tensor name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let trailer_len = u32::try_from(trailer.len())
        .map_err(|_| Error::Config("checkpoint trailer too long".into()))?;
    out.extend_from_slice(&trailer_len.to_le_bytes());
    out.extend_from_slice(trailer.as_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail(&self, detail: impl Into<String>) -> Error {
        Error::Format {
            offset: self.pos as u64,
            detail: detail.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(self.fail(format!(
                "truncated: {what} needs {n} bytes, {} remain",
                self.bytes.len() - self.pos
            )));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Inverse of [`encode_tensors`]. Any structural problem, including trailing
/// bytes, is a format error carrying the byte offset.
pub fn decode_tensors(bytes: &[u8]) -> Result<(Vec<(String, Tensor<f32>)>, String)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        r.pos = 0;
        return Err(r.fail("bad magic, expected MGPC"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        r.pos -= 4;
        return Err(r.fail(format!("unsupported version {version}")));
    }
    let count = r.u32("tensor count")?;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let name_at = r.pos;
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Format {
                offset: name_at as u64 + 2,
                detail: "tensor name is not UTF-8".into(),
            })?
            .to_string();
        let rank = r.u8("rank")? as usize;
        if !(1..=4).contains(&rank) {
            r.pos -= 1;
            return Err(r.fail(format!("tensor {name}: rank {rank} outside 1..=4")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = r.u64("dimension")?;
            if d == 0 || d > u32::MAX as u64 {
                r.pos -= 8;
                return Err(r.fail(format!("tensor {name}: bad dimension {d}")));
            }
            shape.push(d as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| r.fail(format!("tensor {name}: size overflow")))?;
        let payload = r.take(numel, "payload")?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((name, Tensor::from_vec(&shape, data)?));
    }
    let trailer_len = r.u32("trailer length")? as usize;
    let trailer_at = r.pos;
    let trailer = std::str::from_utf8(r.take(trailer_len, "trailer")?)
        .map_err(|_| Error::Format {
            offset: trailer_at as u64,
            detail: "trailer is not UTF-8".into(),
        })?
        .to_string();
    if r.pos != bytes.len() {
        return Err(r.fail(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((tensors, trailer))
}

/// Tokenizer sidecar files, relative to the checkpoint's directory.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sidecars {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bpe_vocab: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bpe_merges: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wp_vocab: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    #[serde(default)]
    pub tokenizers: Sidecars,
}

pub fn encode_checkpoint(model: &MgpStr<f32>, sidecars: &Sidecars) -> Result<Vec<u8>> {
    let meta = CheckpointMeta {
        model: model.config().clone(),
        tokenizers: sidecars.clone(),
    };
    let trailer = serde_json::to_string(&meta).expect("metadata serializes");
    let params = ParamSet::from_module(model);
    encode_tensors(params.iter(), &trailer)
}

/// Rebuilds the model; nothing is returned unless every tensor matches.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(MgpStr<f32>, CheckpointMeta)> {
    let (tensors, trailer) = decode_tensors(bytes)?;
    let trailer_at = bytes.len() - trailer.len();
    let meta: CheckpointMeta = serde_json::from_str(&trailer).map_err(|e| Error::Format {
        offset: trailer_at as u64,
        detail: format!("checkpoint metadata: {e}"),
    })?;
    let mut params = ParamSet::new();
    for (name, t) in tensors {
        params.insert(name, t)?;
    }
    let mut model = MgpStr::new(meta.model.clone(), 0)?;
    params.load_into(&mut model)?;
    Ok((model, meta))
}

pub fn save_checkpoint(model: &MgpStr<f32>, sidecars: &Sidecars, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(model, sidecars)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(MgpStr<f32>, CheckpointMeta)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Parameter count of `model` in checkpoint payload bytes.
pub fn payload_bytes(model: &MgpStr<f32>) -> usize {
    model.num_params() * 4
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::granularity::Granularity;

    fn small_model() -> MgpStr<f32> {
        let mut cfg = ModelConfig::preset("micro")
            .unwrap()
            .with_head(Granularity::Bpe, 20);
        cfg.image_height = 8;
        cfg.image_width = 8;
        cfg.depth = 1;
        cfg.max_len = 4;
        MgpStr::new(cfg, 3).unwrap()
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let model = small_model();
        let side = Sidecars {
            bpe_vocab: Some("bpe_vocab.json".into()),
            ..Default::default()
        };
        let bytes = encode_checkpoint(&model, &side).unwrap();
        let (back, meta) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(meta.tokenizers, side);
        assert_eq!(encode_checkpoint(&back, &side).unwrap(), bytes);
    }

    #[test]
    fn every_truncation_is_rejected() {
        let bytes = encode_checkpoint(&small_model(), &Sidecars::default()).unwrap();
        for cut in (0..bytes.len()).step_by(97).chain([bytes.len() - 1]) {
            match decode_checkpoint(&bytes[..cut]) {
                Err(Error::Format { offset, .. }) => assert!(offset as usize <= cut),
                other => panic!("cut at {cut}: {:?}", other.map(|_| ())),
            }
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(decode_checkpoint(&extra), Err(Error::Format { .. })));
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = encode_checkpoint(&small_model(), &Sidecars::default()).unwrap();
        bytes[4] = 9;
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::Format { offset: 4, .. })));
        bytes[0] = b'X';
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::Format { offset: 0, .. })));
    }
}
