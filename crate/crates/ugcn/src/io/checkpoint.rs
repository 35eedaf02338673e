//! Binary checkpoints.
//!
//! ```text
//! b"UGCNCKPT"            magic
//! u32 LE                 format version
//! u64 LE                 header length in bytes
//! header                 JSON: configuration, topology, epoch, loss
//!                        history, parameter/statistics/optimizer layout
//! f64 LE payload         parameters, then running means and variances,
//!                        then Adam first and second moments
//! [u8; 32]               SHA-256 of everything above
//! ```
//!
//! The checksum is verified before anything is decoded, so a damaged file
//! never yields a partially restored model.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use ugcn_core::array::Array;
use ugcn_core::model::{build_model, UgcnModel};
use ugcn_core::nn::RunningStats;
use ugcn_core::optim::OptimizerState;
use ugcn_core::train::EpochStats;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::io::topology::TopologyFile;

pub const MAGIC: &[u8; 8] = b"UGCNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub model: UgcnModel,
    pub optimizer: Option<OptimizerState>,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochStats>,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct StatsEntry {
    name: String,
    channels: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ExperimentConfig,
    topology: TopologyFile,
    epoch: usize,
    history: Vec<EpochStats>,
    params: Vec<ParamEntry>,
    stats: Vec<StatsEntry>,
    /// Adam step counter, present when moments follow the statistics.
    optimizer_step: Option<u64>,
}

pub fn to_bytes(ck: &Checkpoint) -> Vec<u8> {
    let model = &ck.model;
    let header = Header {
        config: ck.config.clone(),
        topology: TopologyFile::from(model.topology()),
        epoch: ck.epoch,
        history: ck.history.clone(),
        params: model
            .params()
            .iter()
            .map(|p| ParamEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
            })
            .collect(),
        stats: model
            .stats()
            .iter()
            .map(|s| StatsEntry {
                name: s.name.clone(),
                channels: s.mean.len(),
            })
            .collect(),
        optimizer_step: ck.optimizer.as_ref().map(|o| o.step),
    };
    let json = serde_json::to_vec(&header).expect("header is serializable");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    let mut put = |vals: &[f64]| vals.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    model.params().iter().for_each(|p| put(p.value.data()));
    for s in model.stats() {
        put(&s.mean);
        put(&s.var);
    }
    if let Some(o) = &ck.optimizer {
        o.m.iter().for_each(|a| put(a.data()));
        o.v.iter().for_each(|a| put(a.data()));
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

/// Hex SHA-256 of a serialized checkpoint.
pub fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::parse(self.path, "unexpected end of checkpoint"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::parse(self.path, "payload size overflow"))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect())
    }
}

pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 12 + 32 || &bytes[..8] != MAGIC {
        return Err(Error::parse(path, "not a checkpoint file"));
    }
    let (body, sum) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != sum {
        return Err(Error::parse(path, "checksum mismatch"));
    }
    let mut r = Reader { bytes: body, pos: 8, path };
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let len = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
    let len = usize::try_from(len).map_err(|_| Error::parse(path, "header too large"))?;
    let header: Header = serde_json::from_slice(r.take(len)?).map_err(|e| Error::parse(path, e.to_string()))?;

    let topology = header.topology.build()?;
    let mut model = build_model(header.config.model.clone(), &topology, header.config.train.seed)?;
    let mut params = Vec::with_capacity(header.params.len());
    for p in &header.params {
        let n = p.shape.iter().product();
        params.push((p.name.clone(), Array::new(p.shape.clone(), r.f64s(n)?)?));
    }
    let mut stats = Vec::with_capacity(header.stats.len());
    for s in &header.stats {
        stats.push(RunningStats {
            name: s.name.clone(),
            mean: r.f64s(s.channels)?,
            var: r.f64s(s.channels)?,
        });
    }
    if params.len() != model.params().len() || stats.len() != model.stats().len() {
        return Err(Error::parse(path, "parameter layout does not match the configured model"));
    }
    model.load_state(&params, &stats)?;
    let optimizer = match header.optimizer_step {
        Some(step) => {
            let read = |r: &mut Reader<'_>| -> Result<Vec<Array>> {
                header
                    .params
                    .iter()
                    .map(|p| Ok(Array::new(p.shape.clone(), r.f64s(p.shape.iter().product())?)?))
                    .collect()
            };
            let m = read(&mut r)?;
            let v = read(&mut r)?;
            Some(OptimizerState { m, v, step })
        }
        None => None,
    };
    if r.pos != body.len() {
        return Err(Error::parse(path, "trailing bytes after payload"));
    }
    Ok(Checkpoint {
        config: header.config,
        model,
        optimizer,
        epoch: header.epoch,
        history: header.history,
    })
}

/// Writes through a temporary file and renames it into place.
pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<String> {
    let bytes = to_bytes(ck);
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(digest_hex(&bytes))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, path)
}
