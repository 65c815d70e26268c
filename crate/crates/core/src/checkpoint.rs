//! Binary weight checkpoints.
//!
//! Layout, all integers `u32` little-endian, strings length-prefixed UTF-8:
//! magic `GUICKPT\0`, format version, model config as key=value text,
//! vocabulary symbols, then a parameter table of (name, rank, dims,
//! `f32` values). A SHA-256 digest of everything before it closes the file.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{ConfigError, KeyValues};
use crate::dsl::{Token, Vocabulary};
use crate::model::{Model, ModelConfig, ModelError};
use crate::tensor::{ParamStore, Tensor};

pub const MAGIC: &[u8; 8] = b"GUICKPT\0";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot access {path}")]
    Io { path: PathBuf, source: io::Error },
    #[error("checksum mismatch (truncated or corrupted file)")]
    ChecksumMismatch,
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    VersionUnsupported(u32),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint config does not match: {0}")]
    ConfigMismatch(String),
    #[error("checkpoint config: {0}")]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ParamStore<f32>,
}

impl Checkpoint {
    pub fn into_model(self) -> Result<(Model<f32>, Vocabulary), CheckpointError> {
        let model = Model::from_params(self.config, self.params).map_err(mismatch)?;
        Ok((model, self.vocab))
    }
}

fn mismatch(e: ModelError) -> CheckpointError {
    CheckpointError::ConfigMismatch(e.to_string())
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

/// Serializes a checkpoint to bytes.
pub fn encode(model: &Model<f32>, vocab: &Vocabulary) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    let mut kv = KeyValues::new();
    model.config().write_kv(&mut kv);
    put_str(&mut out, &kv.to_text());
    put_u32(&mut out, vocab.len() as u32);
    for t in vocab.symbols() {
        put_str(&mut out, t.as_str());
    }
    put_u32(&mut out, model.params().len() as u32);
    for (name, t) in model.params().iter() {
        put_str(&mut out, name);
        put_u32(&mut out, t.shape().len() as u32);
        for &d in t.shape() {
            put_u32(&mut out, d as u32);
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn bytes(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| CheckpointError::Malformed("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(
            self.bytes(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn string(&mut self) -> Result<&'a str, CheckpointError> {
        let n = self.u32()? as usize;
        std::str::from_utf8(self.bytes(n)?)
            .map_err(|_| CheckpointError::Malformed("invalid UTF-8".into()))
    }
}

/// Parses checkpoint bytes, checking digest, magic, version, and that the
/// parameter table agrees with the embedded config.
pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < DIGEST_LEN {
        return Err(CheckpointError::ChecksumMismatch);
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(CheckpointError::ChecksumMismatch);
    }
    let mut r = Reader { buf: body, pos: 0 };
    if r.bytes(MAGIC.len())
        .map_err(|_| CheckpointError::BadMagic)?
        != MAGIC
    {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::VersionUnsupported(version));
    }
    let config = ModelConfig::from_kv(&mut KeyValues::parse(r.string()?)?)?;
    let mut symbols = Vec::new();
    for _ in 0..r.u32()? {
        let s = r.string()?;
        let t: Token = s
            .parse()
            .map_err(|_| CheckpointError::Malformed(format!("unknown token `{s}`")))?;
        symbols.push(t);
    }
    if symbols.len() != config.vocab_size {
        return Err(CheckpointError::ConfigMismatch(format!(
            "{} vocabulary symbols for vocab_size {}",
            symbols.len(),
            config.vocab_size
        )));
    }
    let mut params = ParamStore::new();
    for _ in 0..r.u32()? {
        let name = r.string()?.to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let n = n.ok_or_else(|| CheckpointError::Malformed(format!("{name}: shape overflows")))?;
        let raw = r.bytes(
            n.checked_mul(4)
                .ok_or_else(|| CheckpointError::Malformed(name.clone()))?,
        )?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::from_vec(&shape, data)
            .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        params.add(name, t);
    }
    if r.pos != body.len() {
        return Err(CheckpointError::Malformed("trailing bytes".into()));
    }
    Model::from_params(config.clone(), params.clone()).map_err(mismatch)?;
    Ok(Checkpoint {
        config,
        vocab: Vocabulary::from_symbols(symbols),
        params,
    })
}

pub fn save_checkpoint(
    model: &Model<f32>,
    vocab: &Vocabulary,
    path: &Path,
) -> Result<(), CheckpointError> {
    fs::write(path, encode(model, vocab)).map_err(|source| CheckpointError::Io {
        path: path.into(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.into(),
        source,
    })?;
    decode(&bytes)
}

/// Loads a checkpoint and rejects it unless its config equals `expected`.
pub fn load_checkpoint_for(
    path: &Path,
    expected: &ModelConfig,
) -> Result<Checkpoint, CheckpointError> {
    let ckpt = load_checkpoint(path)?;
    if &ckpt.config != expected {
        return Err(CheckpointError::ConfigMismatch(format!(
            "stored {:?} differs from expected {:?}",
            ckpt.config, expected
        )));
    }
    Ok(ckpt)
}
