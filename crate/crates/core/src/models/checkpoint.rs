use std::fs;
use std::path::Path;

use super::{LearnedModel, ModelFrame, ModelKind, SigmaBounds, SigmaParam};
use crate::dataset::DatasetStats;
use crate::error::{format, Result};
use crate::numerics::blob::{ByteReader, ByteWriter};
use crate::numerics::MlpParams;

pub const MODEL_MAGIC: &[u8; 4] = b"DYNM";
pub const MODEL_VERSION: u32 = 1;

pub fn encode_model(model: &LearnedModel) -> Vec<u8> {
    let f = model.frame();
    let mut w = ByteWriter::default();
    w.bytes(MODEL_MAGIC);
    w.u32(MODEL_VERSION);
    w.u8(f.kind.tag());
    w.u8(f.sigma.param.tag());
    w.f64(f.dt);
    w.u32(f.dt_multiple);
    w.f64(f.sigma.min);
    w.f64(f.sigma.max);
    w.u32(f.obs_dim() as u32);
    w.u32(f.act_dim as u32);
    w.f64s(&f.stats.mean);
    w.f64s(&f.stats.variance);
    w.f64s(&f.stats.cholesky);
    w.u64(f.stats.count as u64);
    w.u32(model.members().len() as u32);
    for m in model.members() {
        m.write_blob(&mut w);
    }
    let crc = crc32fast::hash(&w.buf);
    w.u32(crc);
    w.buf
}

pub fn decode_model(data: &[u8]) -> Result<LearnedModel> {
    if data.len() < 8 {
        return Err(format("model file truncated"));
    }
    let (body, tail) = data.split_at(data.len() - 4);
    let mut r = ByteReader::new(body);
    r.magic(MODEL_MAGIC)?;
    let version = r.u32()?;
    if version != MODEL_VERSION {
        return Err(format(format!("unsupported model version {version}")));
    }
    let kind = ModelKind::from_tag(r.u8()?).ok_or_else(|| format("unknown model kind"))?;
    let param = SigmaParam::from_tag(r.u8()?).ok_or_else(|| format("unknown sigma parameterization"))?;
    let dt = r.f64()?;
    let dt_multiple = r.u32()?;
    let (min, max) = (r.f64()?, r.f64()?);
    let obs_dim = r.u32()? as usize;
    let act_dim = r.u32()? as usize;
    let stats = DatasetStats {
        mean: r.f64_vec(obs_dim)?,
        variance: r.f64_vec(obs_dim)?,
        cholesky: r.f64_vec(obs_dim)?,
        count: r.u64()? as usize,
    };
    let count = r.u32()? as usize;
    let mut members = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        members.push(MlpParams::read_blob(&mut r)?);
    }
    if r.remaining() != 0 {
        return Err(format("trailing bytes in model file"));
    }
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if stored != crc32fast::hash(body) {
        return Err(format("model checksum mismatch"));
    }
    let frame = ModelFrame { kind, act_dim, dt, dt_multiple, stats, sigma: SigmaBounds { min, max, param } };
    LearnedModel::from_members(frame, members).map_err(|e| format(format!("inconsistent model file: {e}")))
}

pub fn save_model(model: &LearnedModel, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode_model(model))?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<LearnedModel> {
    decode_model(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Architecture;
    use crate::numerics::{Activation, Rng};
    use crate::Error;

    fn model() -> LearnedModel {
        let frame = ModelFrame {
            kind: ModelKind::Stochastic,
            act_dim: 2,
            dt: 0.03,
            dt_multiple: 3,
            stats: DatasetStats {
                mean: vec![0.1, 0.2, 0.3],
                variance: vec![1.0, 4.0, 9.0],
                cholesky: vec![1.0, 2.0, 3.0],
                count: 77,
            },
            sigma: SigmaBounds { min: 1e-3, max: 5.0, param: SigmaParam::Log },
        };
        let arch = Architecture { hidden: vec![6, 7], activation: Activation::Elu };
        LearnedModel::init(frame, &arch, 3, &Rng::new(5)).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        assert_eq!(decode_model(&encode_model(&m)).unwrap(), m);
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = encode_model(&model());
        for cut in [0, 3, 20, bytes.len() - 1] {
            assert!(matches!(decode_model(&bytes[..cut]), Err(Error::Format(_))));
        }
        let mut flipped = bytes.clone();
        flipped[60] ^= 0x10;
        assert!(matches!(decode_model(&flipped), Err(Error::Format(_))));
        let mut magic = bytes;
        magic[0] = b'X';
        assert!(matches!(decode_model(&magic), Err(Error::Format(_))));
    }
}
