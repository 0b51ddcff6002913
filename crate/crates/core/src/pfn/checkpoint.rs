//! Binary parameter file plus a JSON metadata sidecar.
//!
//! Layout (little-endian): magic `LCXPFN`, `u32` version, `u32` tensor
//! count, then per tensor a `u32` name length, UTF-8 name, `u32` rank,
//! `u64` dims and the `f32` values. The sidecar at `<path>.json` carries the
//! model config, the bin edges and the training seed.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{BinGrid, ModelConfig, ModelParams, Pfn, PfnError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"LCXPFN";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub version: u32,
    pub model: ModelConfig,
    pub edges: Vec<f64>,
    pub seed: u64,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save_checkpoint(path: &Path, pfn: &Pfn, seed: u64) -> Result<()> {
    let params = pfn.params();
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let entries = params.config().param_entries();
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for entry in &entries {
        w.write_all(&(entry.name.len() as u32).to_le_bytes())?;
        w.write_all(entry.name.as_bytes())?;
        w.write_all(&(entry.shape.len() as u32).to_le_bytes())?;
        for &d in &entry.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in &params.data()[entry.range()] {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;

    let meta = CheckpointMeta {
        version: CHECKPOINT_VERSION,
        model: *params.config(),
        edges: pfn.grid().edges().to_vec(),
        seed,
    };
    let json = serde_json::to_string_pretty(&meta).map_err(|e| PfnError::Format(e.to_string()))?;
    std::fs::write(sidecar_path(path), json + "\n")?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Loads a checkpoint, checking every tensor name and shape against the sidecar config.
pub fn load_checkpoint(path: &Path) -> Result<(Pfn, CheckpointMeta)> {
    let meta_text = std::fs::read_to_string(sidecar_path(path))?;
    let meta: CheckpointMeta = serde_json::from_str(&meta_text).map_err(|e| PfnError::Format(e.to_string()))?;
    if meta.version != CHECKPOINT_VERSION {
        return Err(PfnError::Format(format!("unsupported sidecar version {}", meta.version)));
    }
    meta.model.validate()?;

    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(PfnError::Format("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(PfnError::Format(format!("unsupported checkpoint version {version}")));
    }
    let entries = meta.model.param_entries();
    let count = read_u32(&mut r)? as usize;
    if count != entries.len() {
        return Err(PfnError::Format(format!("expected {} tensors, found {count}", entries.len())));
    }
    let mut data = vec![0f32; meta.model.num_params()];
    for entry in &entries {
        let name_len = read_u32(&mut r)? as usize;
        if name_len > 1024 {
            return Err(PfnError::Format("tensor name too long".into()));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        if name != entry.name.as_bytes() {
            return Err(PfnError::Format(format!("expected tensor {}, found {}", entry.name, String::from_utf8_lossy(&name))));
        }
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(read_u64(&mut r)? as usize);
        }
        if shape != entry.shape {
            return Err(PfnError::Format(format!("tensor {} has shape {shape:?}, expected {:?}", entry.name, entry.shape)));
        }
        let mut buf = [0u8; 4];
        for v in &mut data[entry.range()] {
            r.read_exact(&mut buf)?;
            *v = f32::from_le_bytes(buf);
        }
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(PfnError::Format(format!("{} trailing bytes", rest.len())));
    }
    let params = ModelParams::from_data(meta.model, data)?;
    let pfn = Pfn::new(params, BinGrid::from_edges(meta.edges.clone())?)?;
    Ok((pfn, meta))
}
