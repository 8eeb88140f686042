//! Binary model checkpoints. All integers and floats are little-endian.
//!
//! ```text
//! magic        8 bytes  "PFLKCKPT"
//! version      u32      1
//! layer_count  u32
//! per layer:
//!   name_len u32, name (UTF-8), frozen u8, rows u32, cols u32,
//!   rows·cols f64 (row-major)
//!   adapter u8 (0 | 1); if 1:
//!     rank u32, scaling f64, A (rows·rank f64), B (rank·cols f64)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::lora::LoraAdapter;
use super::model::{Layer, LayeredModel};
use crate::error::{Error, Result};
use crate::math::Matrix;

pub const MAGIC: &[u8; 8] = b"PFLKCKPT";
pub const VERSION: u32 = 1;

pub fn encode(model: &LayeredModel) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + model.num_base_params() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(model.layers.len() as u32).to_le_bytes());
    for l in &model.layers {
        out.extend_from_slice(&(l.name.len() as u32).to_le_bytes());
        out.extend_from_slice(l.name.as_bytes());
        out.push(u8::from(l.frozen));
        out.extend_from_slice(&(l.d_out() as u32).to_le_bytes());
        out.extend_from_slice(&(l.d_in() as u32).to_le_bytes());
        put_f64s(&mut out, l.weight.as_slice());
        match &l.adapter {
            None => out.push(0),
            Some(a) => {
                out.push(1);
                out.extend_from_slice(&(a.rank as u32).to_le_bytes());
                out.extend_from_slice(&a.scaling.to_le_bytes());
                put_f64s(&mut out, a.a.as_slice());
                put_f64s(&mut out, a.b.as_slice());
            }
        }
    }
    out
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Decode(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        let n = rows.checked_mul(cols).ok_or_else(|| Error::Decode("matrix size overflows".into()))?;
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Decode("matrix size overflows".into()))?)?;
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Matrix::from_vec(rows, cols, data)
    }
}

pub fn decode(buf: &[u8]) -> Result<LayeredModel> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(Error::Decode("not a checkpoint (bad magic)".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Decode(format!("unsupported checkpoint version {version}")));
    }
    let n = c.u32()? as usize;
    let mut layers = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let len = c.u32()? as usize;
        let name = String::from_utf8(c.take(len)?.to_vec()).map_err(|e| Error::Decode(e.to_string()))?;
        let frozen = match c.u8()? {
            0 => false,
            1 => true,
            b => return Err(Error::Decode(format!("bad frozen flag {b}"))),
        };
        let rows = c.u32()? as usize;
        let cols = c.u32()? as usize;
        let weight = c.matrix(rows, cols)?;
        let adapter = match c.u8()? {
            0 => None,
            1 => {
                let rank = c.u32()? as usize;
                let scaling = c.f64()?;
                let a = c.matrix(rows, rank)?;
                let b = c.matrix(rank, cols)?;
                Some(LoraAdapter { target_layer: name.clone(), rank, a, b, scaling })
            }
            b => return Err(Error::Decode(format!("bad adapter flag {b}"))),
        };
        layers.push(Layer { name, weight, frozen, adapter });
    }
    if c.pos != buf.len() {
        return Err(Error::Decode(format!("{} trailing bytes after checkpoint", buf.len() - c.pos)));
    }
    let model = LayeredModel { layers };
    model.validate().map_err(|e| Error::Decode(e.to_string()))?;
    Ok(model)
}

pub fn write(model: &LayeredModel, mut w: impl Write) -> Result<()> {
    w.write_all(&encode(model))?;
    Ok(())
}

pub fn read(mut r: impl Read) -> Result<LayeredModel> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    decode(&buf)
}

pub fn save(model: &LayeredModel, path: &Path) -> Result<()> {
    std::fs::write(path, encode(model))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<LayeredModel> {
    decode(&std::fs::read(path)?)
}
