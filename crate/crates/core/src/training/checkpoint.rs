//! Single-file checkpoint.
//!
//! Layout: 8-byte magic, u32 version, u64 header length, JSON header
//! (model config, vocabulary, character table, label sets, free-form
//! metadata), u32 tensor count, then per tensor a u32-length-prefixed name,
//! u32 rank, u64 dims and little-endian f64 values. A SHA-256 digest of all
//! preceding bytes closes the file. All integers are little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{LabelSets, Vocabulary};
use crate::model::{CharVocabulary, ModelConfig, ModelParams, NluModel};
use crate::numerics::rng::rng_from_seed;
use crate::numerics::Tensor;

const MAGIC: &[u8; 8] = b"CAUDCKPT";
const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("integrity check failed: {0}")]
    Integrity(String),
    #[error("bad checkpoint header: {0}")]
    Header(String),
}

/// A model plus whatever the writer chose to record alongside it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: NluModel,
    pub metadata: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: Vocabulary,
    chars: CharVocabulary,
    labels: LabelSets,
    metadata: serde_json::Value,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckpointSummary {
    pub config: ModelConfig,
    pub vocab_size: usize,
    pub intents: Vec<String>,
    pub tags: Vec<String>,
    pub parameter_count: usize,
    pub shapes: Vec<(String, Vec<usize>)>,
    pub parameter_hash: String,
    pub metadata: serde_json::Value,
}

pub fn encode_checkpoint(model: &NluModel, metadata: &serde_json::Value) -> Vec<u8> {
    let header = serde_json::to_vec(&Header {
        config: model.config.clone(),
        vocab: model.vocab.clone(),
        chars: model.chars.clone(),
        labels: model.labels.clone(),
        metadata: metadata.clone(),
    })
    .expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    let named = model.params.named_tensors();
    out.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, t) in named {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        t.write_le(&mut out);
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &NluModel, metadata: &serde_json::Value) -> Result<(), CheckpointError> {
    std::fs::write(path, encode_checkpoint(model, metadata))?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            CheckpointError::Integrity(format!("truncated at byte {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize, CheckpointError> {
        usize::try_from(self.u64()?).map_err(|_| CheckpointError::Integrity("length overflow".into()))
    }

    fn tensor(&mut self) -> Result<Tensor, CheckpointError> {
        let rank = self.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.len()?);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| CheckpointError::Integrity("tensor size overflow".into()))?;
        let bytes = self.take(count.checked_mul(8).ok_or_else(|| CheckpointError::Integrity("tensor size overflow".into()))?)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Tensor::new(shape, data).map_err(|e| CheckpointError::Integrity(e.to_string()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < MAGIC.len() + 4 + DIGEST_LEN {
        return Err(CheckpointError::Integrity("file too short".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(CheckpointError::Integrity("digest mismatch (truncated or corrupted file)".into()));
    }
    let mut r = Reader { buf: body, pos: 12 };
    let header_len = r.len()?;
    let header: Header = serde_json::from_slice(r.take(header_len)?).map_err(|e| CheckpointError::Header(e.to_string()))?;
    header.config.validate().map_err(|e| CheckpointError::Header(e.to_string()))?;

    let mut params = ModelParams::init(&header.config, header.vocab.len(), header.chars.len(), &mut rng_from_seed(0));
    let expected: Vec<(String, Vec<usize>)> = params
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(CheckpointError::Header(format!("expected {} tensors, found {count}", expected.len())));
    }
    for ((name, shape), slot) in expected.iter().zip(params.tensors_mut()) {
        let len = r.u32()? as usize;
        let got_name = std::str::from_utf8(r.take(len)?).map_err(|e| CheckpointError::Header(e.to_string()))?;
        if got_name != name {
            return Err(CheckpointError::Header(format!("expected tensor {name}, found {got_name}")));
        }
        let t = r.tensor()?;
        if t.shape() != shape.as_slice() {
            return Err(CheckpointError::Header(format!("tensor {name} has shape {:?}, expected {shape:?}", t.shape())));
        }
        *slot = t;
    }
    if r.pos != body.len() {
        return Err(CheckpointError::Integrity("trailing bytes after tensors".into()));
    }
    Ok(Checkpoint {
        model: NluModel {
            config: header.config,
            vocab: header.vocab,
            chars: header.chars,
            labels: header.labels,
            params,
        },
        metadata: header.metadata,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    decode_checkpoint(&std::fs::read(path)?)
}

pub fn inspect_checkpoint(path: impl AsRef<Path>) -> Result<CheckpointSummary, CheckpointError> {
    let ck = load_checkpoint(path)?;
    let m = &ck.model;
    Ok(CheckpointSummary {
        config: m.config.clone(),
        vocab_size: m.vocab.len(),
        intents: m.labels.intents.clone(),
        tags: m.labels.tags.clone(),
        parameter_count: m.params.parameter_count(),
        shapes: m
            .params
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect(),
        parameter_hash: m.params.hash(),
        metadata: ck.metadata,
    })
}
