use super::ObjectiveError;
use crate::corpus::FieldSchema;
use crate::embed::EmbedderConfig;
use crate::grid::{EncoderKind, GridSpec};
use crate::net::{ArchConfig, ParamSet, ParamTensor};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VWGM";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    /// Epoch whose parameters were kept.
    pub epoch: usize,
    pub epochs_run: usize,
    pub best_val_miou: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: ArchConfig,
    pub schema: FieldSchema,
    pub grid: GridSpec,
    pub embedder: EmbedderConfig,
    pub encoder: EncoderKind,
    pub params: ParamSet<f32>,
    pub meta: TrainingMeta,
}

/// Everything but the tensors; stored as the JSON header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub arch: ArchConfig,
    pub schema: FieldSchema,
    pub grid: GridSpec,
    pub embedder: EmbedderConfig,
    pub encoder: EncoderKind,
    pub meta: TrainingMeta,
}

fn malformed(m: impl Into<String>) -> ObjectiveError {
    ObjectiveError::MalformedCheckpoint(m.into())
}

fn u32_len(n: usize, what: &str) -> Result<u32, ObjectiveError> {
    u32::try_from(n).map_err(|_| malformed(format!("{what} too large")))
}

impl Checkpoint {
    pub fn header(&self) -> CheckpointHeader {
        CheckpointHeader {
            arch: self.arch,
            schema: self.schema.clone(),
            grid: self.grid,
            embedder: self.embedder.clone(),
            encoder: self.encoder,
            meta: self.meta.clone(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ObjectiveError> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let header = serde_json::to_vec(&self.header()).map_err(|e| malformed(e.to_string()))?;
        out.extend_from_slice(&u32_len(header.len(), "header")?.to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&u32_len(self.params.tensors.len(), "tensor count")?.to_le_bytes());
        for t in &self.params.tensors {
            let name = t.name.as_bytes();
            let name_len = u16::try_from(name.len()).map_err(|_| malformed("tensor name too long"))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name);
            let rank = u8::try_from(t.shape.len()).map_err(|_| malformed("tensor rank too large"))?;
            out.push(rank);
            for &d in &t.shape {
                out.extend_from_slice(&u32_len(d, "dimension")?.to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_reader(mut r: impl Read) -> Result<Self, ObjectiveError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(ObjectiveError::BadMagic);
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(ObjectiveError::VersionMismatch {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let header_len = read_u32(&mut r)? as usize;
        let header_bytes = read_vec(&mut r, header_len)?;
        let header: CheckpointHeader =
            serde_json::from_slice(&header_bytes).map_err(|e| malformed(format!("header: {e}")))?;
        header.arch.validate()?;

        let expected = ParamSet::<f32>::zeros(&header.arch);
        let count = read_u32(&mut r)? as usize;
        if count != expected.tensors.len() {
            return Err(malformed(format!(
                "{count} tensors, architecture has {}",
                expected.tensors.len()
            )));
        }
        let mut tensors = Vec::with_capacity(count);
        for want in &expected.tensors {
            let mut b2 = [0u8; 2];
            r.read_exact(&mut b2)?;
            let name = String::from_utf8(read_vec(&mut r, u16::from_le_bytes(b2) as usize)?)
                .map_err(|_| malformed("tensor name is not UTF-8"))?;
            let mut rank = [0u8; 1];
            r.read_exact(&mut rank)?;
            let mut shape = Vec::with_capacity(rank[0] as usize);
            for _ in 0..rank[0] {
                shape.push(read_u32(&mut r)? as usize);
            }
            if name != want.name || shape != want.shape {
                return Err(malformed(format!(
                    "tensor {name:?} {shape:?} where {:?} {:?} was expected",
                    want.name, want.shape
                )));
            }
            let bytes = read_vec(&mut r, want.data.len() * 4)?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push(ParamTensor { name, shape, data });
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(malformed("trailing bytes after the last tensor"));
        }
        Ok(Checkpoint {
            arch: header.arch,
            schema: header.schema,
            grid: header.grid,
            embedder: header.embedder,
            encoder: header.encoder,
            params: ParamSet { tensors },
            meta: header.meta,
        })
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32, ObjectiveError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_vec(r: &mut impl Read, len: usize) -> Result<Vec<u8>, ObjectiveError> {
    let mut v = Vec::new();
    r.by_ref().take(len as u64).read_to_end(&mut v)?;
    if v.len() != len {
        return Err(std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "checkpoint truncated").into());
    }
    Ok(v)
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<(), ObjectiveError> {
    let bytes = checkpoint.to_bytes()?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ObjectiveError> {
    let bytes = std::fs::read(path)?;
    Checkpoint::from_reader(bytes.as_slice())
}
