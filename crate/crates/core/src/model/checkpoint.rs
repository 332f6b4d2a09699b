//! Self-describing binary checkpoint format, version 1.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic            8 bytes  "ADLGCKPT"
//! version          u32      1
//! hidden           u32
//! vocab_count      u32
//! iterations_done  u64
//! seed             u64
//! test_fraction    f64 bits
//! vocab            vocab_count entries of (u32 byte length, UTF-8 bytes)
//! tensor_count     u32
//! tensors          per tensor, in the canonical order of
//!                  `ModelParams::tensors`:
//!                    name_len u16, name bytes,
//!                    rows u32, cols u32   (vectors store rows = 1),
//!                    rows*cols f64 values, row-major
//! ```
//!
//! Values round-trip bit-exactly, so a reloaded model predicts identically.

use super::params::ModelParams;
use crate::ingest::Vocabulary;
use std::io::{self, Read, Write};
use thiserror::Error;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ADLGCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

/// A trained model with everything needed to evaluate it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub vocab: Vocabulary,
    pub iterations_done: u64,
    /// Seed of the training run; also selects the train/test split.
    pub seed: u64,
    /// Test fraction the corpus was split with.
    pub test_fraction: f64,
}

fn write_u32(w: &mut dyn Write, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_u64(w: &mut dyn Write, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub fn save_checkpoint(sink: &mut dyn Write, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    let mut w = io::BufWriter::new(sink);
    w.write_all(CHECKPOINT_MAGIC)?;
    write_u32(&mut w, CHECKPOINT_VERSION)?;
    write_u32(&mut w, ckpt.params.hidden as u32)?;
    write_u32(&mut w, ckpt.vocab.len() as u32)?;
    write_u64(&mut w, ckpt.iterations_done)?;
    write_u64(&mut w, ckpt.seed)?;
    w.write_all(&ckpt.test_fraction.to_bits().to_le_bytes())?;
    for token in ckpt.vocab.tokens() {
        write_u32(&mut w, token.len() as u32)?;
        w.write_all(token.as_bytes())?;
    }
    let tensors = ckpt.params.tensors();
    write_u32(&mut w, tensors.len() as u32)?;
    for (name, tensor) in tensors {
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        let (rows, cols) = tensor.shape2();
        write_u32(&mut w, rows as u32)?;
        write_u32(&mut w, cols as u32)?;
        for value in tensor.values() {
            w.write_all(&value.to_bits().to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Reader<'a> {
    r: &'a mut dyn Read,
}

impl Reader<'_> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>, CheckpointError> {
        let mut buf = vec![0u8; n];
        self.r.read_exact(&mut buf)?;
        Ok(buf)
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        let mut buf = [0u8; 2];
        self.r.read_exact(&mut buf)?;
        Ok(u16::from_le_bytes(buf))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        let mut buf = [0u8; 4];
        self.r.read_exact(&mut buf)?;
        Ok(u32::from_le_bytes(buf))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        let mut buf = [0u8; 8];
        self.r.read_exact(&mut buf)?;
        Ok(u64::from_le_bytes(buf))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn string(&mut self, len: usize, what: &str) -> Result<String, CheckpointError> {
        String::from_utf8(self.bytes(len)?)
            .map_err(|_| CheckpointError::Corrupt(format!("{what} is not UTF-8")))
    }
}

pub fn load_checkpoint(source: &mut dyn Read) -> Result<Checkpoint, CheckpointError> {
    let mut buffered = io::BufReader::new(source);
    let mut r = Reader { r: &mut buffered };
    let magic = r.bytes(8)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let hidden = r.u32()? as usize;
    let vocab_count = r.u32()? as usize;
    let iterations_done = r.u64()?;
    let seed = r.u64()?;
    let test_fraction = r.f64()?;

    let mut tokens = Vec::with_capacity(vocab_count);
    for _ in 0..vocab_count {
        let len = r.u32()? as usize;
        tokens.push(r.string(len, "vocabulary token")?);
    }
    let vocab = Vocabulary::from_tokens(tokens)
        .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;

    let mut params = ModelParams::zeros(vocab_count, hidden);
    let tensor_count = r.u32()? as usize;
    let expected = params.tensors().len();
    if tensor_count != expected {
        return Err(CheckpointError::Corrupt(format!(
            "expected {expected} tensors, found {tensor_count}"
        )));
    }
    let names: Vec<&'static str> = params.tensors().iter().map(|(n, _)| *n).collect();
    let shapes: Vec<(usize, usize)> = params.tensors().iter().map(|(_, t)| t.shape2()).collect();
    for (i, (expected_name, expected_shape)) in names.iter().zip(shapes).enumerate() {
        let name_len = r.u16()? as usize;
        let name = r.string(name_len, "tensor name")?;
        if name != *expected_name {
            return Err(CheckpointError::Corrupt(format!(
                "tensor {i}: expected `{expected_name}`, found `{name}`"
            )));
        }
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        if (rows, cols) != expected_shape {
            return Err(CheckpointError::Corrupt(format!(
                "tensor `{name}`: expected shape {expected_shape:?}, found ({rows}, {cols})"
            )));
        }
        let mut tensors = params.tensors_mut();
        let view = &mut tensors[i].1;
        for index in 0..rows * cols {
            view.set(index, r.f64()?);
        }
    }
    Ok(Checkpoint { params, vocab, iterations_done, seed, test_fraction })
}
