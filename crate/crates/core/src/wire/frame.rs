//! Byte layout of one parameter message (all integers little-endian):
//!
//! ```text
//! header (16 bytes)
//!   magic        4  "PFLW"
//!   version      u16  1
//!   direction    u8   0 = down, 1 = up
//!   precision    u8   0 = f64, 1 = f32, 2 = nf4
//!   round        u32
//!   tensor_count u32
//! name table, per tensor
//!   name_len u16, name (UTF-8), rows u32, cols u32
//! payload, per tensor in table order
//!   f64 / f32: rows·cols values, row-major
//!   nf4: blocks of 64 values, each an f32 scale then codes two per byte
//!        (low nibble first)
//! ```

use serde::{Deserialize, Serialize};

use super::ledger::{BitWidth, Direction};
use super::nf4::{nf4_dequantize, nf4_pack, nf4_packed_len, nf4_quantize, nf4_unpack, NF4_BLOCK};
use crate::error::{Error, Result};
use crate::learners::{Param, ParamSet};
use crate::math::Matrix;

pub const FRAME_MAGIC: &[u8; 4] = b"PFLW";
pub const FRAME_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F64,
    #[default]
    F32,
    Nf4,
}

impl Precision {
    pub fn bit_width(self) -> BitWidth {
        match self {
            Precision::F64 => BitWidth::F64,
            Precision::F32 => BitWidth::F32,
            Precision::Nf4 => BitWidth::NF4,
        }
    }

    fn code(self) -> u8 {
        match self {
            Precision::F64 => 0,
            Precision::F32 => 1,
            Precision::Nf4 => 2,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Precision::F64),
            1 => Ok(Precision::F32),
            2 => Ok(Precision::Nf4),
            _ => Err(Error::Decode(format!("unknown precision code {c}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub round: u32,
    pub direction: Direction,
    pub precision: Precision,
    pub tensors: ParamSet,
}

pub fn encode_frame(frame: &Frame) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_LEN + frame.tensors.num_params() * 4);
    out.extend_from_slice(FRAME_MAGIC);
    out.extend_from_slice(&FRAME_VERSION.to_le_bytes());
    out.push(match frame.direction {
        Direction::Down => 0,
        Direction::Up => 1,
    });
    out.push(frame.precision.code());
    out.extend_from_slice(&frame.round.to_le_bytes());
    out.extend_from_slice(&(frame.tensors.len() as u32).to_le_bytes());
    for p in frame.tensors.iter() {
        let name = p.name.as_bytes();
        let len = u16::try_from(name.len()).map_err(|_| Error::Encode(format!("tensor name too long: {}", p.name)))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&(p.value.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(p.value.cols() as u32).to_le_bytes());
    }
    for p in frame.tensors.iter() {
        let values = p.value.as_slice();
        match frame.precision {
            Precision::F64 => values.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            Precision::F32 => values.iter().for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes())),
            Precision::Nf4 => nf4_pack(&nf4_quantize(values, NF4_BLOCK)?, &mut out),
        }
    }
    Ok(out)
}

pub fn decode_frame(buf: &[u8]) -> Result<Frame> {
    let short = || Error::Decode("frame truncated".into());
    if buf.len() < HEADER_LEN || &buf[..4] != FRAME_MAGIC {
        return Err(Error::Decode("not a parameter frame".into()));
    }
    let version = u16::from_le_bytes([buf[4], buf[5]]);
    if version != FRAME_VERSION {
        return Err(Error::Decode(format!("unsupported frame version {version}")));
    }
    let direction = match buf[6] {
        0 => Direction::Down,
        1 => Direction::Up,
        d => return Err(Error::Decode(format!("unknown direction {d}"))),
    };
    let precision = Precision::from_code(buf[7])?;
    let round = u32::from_le_bytes(buf[8..12].try_into().expect("4 bytes"));
    let count = u32::from_le_bytes(buf[12..16].try_into().expect("4 bytes")) as usize;
    let mut pos = HEADER_LEN;
    let mut take = |n: usize| -> Result<&[u8]> {
        let end = pos.checked_add(n).filter(|&e| e <= buf.len()).ok_or_else(short)?;
        let s = &buf[pos..end];
        pos = end;
        Ok(s)
    };
    let mut table = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = u16::from_le_bytes(take(2)?.try_into().expect("2 bytes")) as usize;
        let name = String::from_utf8(take(len)?.to_vec()).map_err(|e| Error::Decode(e.to_string()))?;
        let rows = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        let cols = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        table.push((name, rows, cols));
    }
    let mut params = Vec::with_capacity(table.len());
    for (name, rows, cols) in table {
        let n = rows.checked_mul(cols).ok_or_else(short)?;
        let data: Vec<f64> = match precision {
            Precision::F64 => take(n.checked_mul(8).ok_or_else(short)?)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
            Precision::F32 => take(n.checked_mul(4).ok_or_else(short)?)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect(),
            Precision::Nf4 => nf4_dequantize(&nf4_unpack(take(nf4_packed_len(n, NF4_BLOCK))?, n, NF4_BLOCK)?),
        };
        params.push(Param { name, value: Matrix::from_vec(rows, cols, data)? });
    }
    if pos != buf.len() {
        return Err(Error::Decode(format!("{} trailing bytes after frame", buf.len() - pos)));
    }
    Ok(Frame { round, direction, precision, tensors: ParamSet::new(params) })
}

/// What the receiver of `tensors` sees after one encode/decode pass.
pub fn transmit(tensors: &ParamSet, precision: Precision, round: u32, direction: Direction) -> Result<ParamSet> {
    if precision == Precision::F64 {
        return Ok(tensors.clone());
    }
    let frame = Frame { round, direction, precision, tensors: tensors.clone() };
    Ok(decode_frame(&encode_frame(&frame)?)?.tensors)
}
