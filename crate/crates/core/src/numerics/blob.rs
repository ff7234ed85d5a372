//! Little-endian binary encoding shared by all persisted file formats.

use ndarray::{Array1, Array2};

use super::mlp::{Activation, Dense, MlpParams};
use crate::error::{format, Result};

pub const PARAMS_MAGIC: &[u8; 4] = b"DYNB";
pub const PARAMS_VERSION: u32 = 1;

#[derive(Default)]
pub(crate) struct ByteWriter {
    pub buf: Vec<u8>,
}

impl ByteWriter {
    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64s<'a>(&mut self, vs: impl IntoIterator<Item = &'a f64>) {
        for v in vs {
            self.f64(*v);
        }
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes(s.as_bytes());
    }
}

pub(crate) struct ByteReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(format(format!(
                "unexpected end of data at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| format("length overflow"))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| format("invalid utf-8 string"))
    }

    pub fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != expected {
            return Err(format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(expected)
            )));
        }
        Ok(())
    }
}

impl MlpParams {
    /// Self-describing binary blob: magic, version, layer count, per-layer
    /// `(out, in)` dims, hidden activation tags, then the f64 payload with
    /// each layer's weights row-major followed by its bias.
    pub fn to_blob(&self) -> Vec<u8> {
        let mut w = ByteWriter::default();
        self.write_blob(&mut w);
        w.buf
    }

    pub(crate) fn write_blob(&self, w: &mut ByteWriter) {
        w.bytes(PARAMS_MAGIC);
        w.u32(PARAMS_VERSION);
        w.u32(self.layers().len() as u32);
        for l in self.layers() {
            w.u32(l.fan_out() as u32);
            w.u32(l.fan_in() as u32);
        }
        for a in self.activations() {
            w.u8(a.tag());
        }
        for l in self.layers() {
            w.f64s(l.weight.iter());
            w.f64s(l.bias.iter());
        }
    }

    pub fn from_blob(data: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(data);
        let p = Self::read_blob(&mut r)?;
        if r.remaining() != 0 {
            return Err(format("trailing bytes after parameter blob"));
        }
        Ok(p)
    }

    pub(crate) fn read_blob(r: &mut ByteReader<'_>) -> Result<Self> {
        r.magic(PARAMS_MAGIC)?;
        let version = r.u32()?;
        if version != PARAMS_VERSION {
            return Err(format(format!("unsupported parameter blob version {version}")));
        }
        let n = r.u32()? as usize;
        if n == 0 || n > 1024 {
            return Err(format(format!("implausible layer count {n}")));
        }
        let mut dims = Vec::with_capacity(n);
        for _ in 0..n {
            let out = r.u32()? as usize;
            let inp = r.u32()? as usize;
            dims.push((out, inp));
        }
        let mut activations = Vec::with_capacity(n - 1);
        for _ in 0..n - 1 {
            let tag = r.u8()?;
            activations
                .push(Activation::from_tag(tag).ok_or_else(|| format(format!("bad activation tag {tag}")))?);
        }
        let mut layers = Vec::with_capacity(n);
        for (out, inp) in dims {
            let w = r.f64_vec(out * inp)?;
            let b = r.f64_vec(out)?;
            layers.push(Dense {
                weight: Array2::from_shape_vec((out, inp), w).map_err(|e| format(e.to_string()))?,
                bias: Array1::from(b),
            });
        }
        MlpParams::new(layers, activations).map_err(|e| format(e.to_string()))
    }
}
