use std::fs;
use std::path::Path;

use super::{Dataset, Episode};
use crate::error::{format, Result};
use crate::numerics::blob::{ByteReader, ByteWriter};

pub const DATASET_MAGIC: &[u8; 4] = b"DYND";
pub const DATASET_VERSION: u32 = 1;

/// Encodes a dataset: magic, version, env name, base timestep, episode
/// count, per-episode `(T, obs_dim, act_dim)`, the f64 arrays of each
/// episode (observations, actions, rewards), and a trailing CRC32 of every
/// preceding byte.
pub fn encode_dataset(d: &Dataset) -> Vec<u8> {
    let mut w = ByteWriter::default();
    w.bytes(DATASET_MAGIC);
    w.u32(DATASET_VERSION);
    w.str(&d.env_name);
    w.f64(d.dt_base);
    w.u32(d.episodes.len() as u32);
    for ep in &d.episodes {
        w.u32(ep.len() as u32);
        w.u32(ep.obs_dim() as u32);
        w.u32(ep.act_dim() as u32);
    }
    for ep in &d.episodes {
        let (o, a, r) = ep.raw_parts();
        w.f64s(o);
        w.f64s(a);
        w.f64s(r);
    }
    let crc = crc32fast::hash(&w.buf);
    w.u32(crc);
    w.buf
}

pub fn decode_dataset(data: &[u8]) -> Result<Dataset> {
    if data.len() < 8 {
        return Err(format("dataset file too short"));
    }
    let (body, tail) = data.split_at(data.len() - 4);
    let mut r = ByteReader::new(body);
    r.magic(DATASET_MAGIC)?;
    let version = r.u32()?;
    if version != DATASET_VERSION {
        return Err(format(format!("unsupported dataset version {version}")));
    }
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(format("dataset checksum mismatch"));
    }
    let env_name = r.str()?;
    let dt_base = r.f64()?;
    let count = r.u32()? as usize;
    let mut dims = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        dims.push((r.u32()? as usize, r.u32()? as usize, r.u32()? as usize));
    }
    let mut episodes = Vec::with_capacity(dims.len());
    for (t, od, ad) in dims {
        let o = r.f64_vec((t + 1) * od)?;
        let a = r.f64_vec(t * ad)?;
        let rw = r.f64_vec(t)?;
        episodes.push(Episode::from_parts(dt_base, od, ad, o, a, rw).map_err(|e| format(e.to_string()))?);
    }
    if r.remaining() != 0 {
        return Err(format("trailing bytes in dataset file"));
    }
    Ok(Dataset {
        env_name,
        dt_base,
        episodes,
    })
}

pub fn save_dataset(d: &Dataset, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    // write-then-rename so an interrupted save never leaves a partial file
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode_dataset(d))?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(&fs::read(path)?)
}
