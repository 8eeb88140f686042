//! 4-bit normal-float quantization with per-block absmax scaling.
//!
//! The codebook holds 16 normalized standard-normal quantiles: with
//! `o = 0.9677083`, eight positive levels `Φ⁻¹(p)` for `p` evenly spaced from
//! `o` down to 0.5 (exclusive), seven negative levels `−Φ⁻¹(p)` for `p` evenly
//! spaced from `o` to 0.5 in seven steps, and an exact zero, all divided by
//! the largest level so the ends are exactly `±1`.

use crate::error::{Error, Result};

pub const NF4_BLOCK: usize = 64;

/// Index of `0.0` in [`NF4_CODEBOOK`].
pub const NF4_ZERO_CODE: u8 = 7;

pub const NF4_CODEBOOK: [f64; 16] = [
    -1.0,
    -0.69619289060372,
    -0.5250730386952291,
    -0.3949174906993099,
    -0.2844413576181077,
    -0.18477343519288886,
    -0.09104999214427931,
    0.0,
    0.07958032909416937,
    0.16093017270493618,
    0.2461122939299359,
    0.33791519352165506,
    0.44070980241319013,
    0.562616970075237,
    0.7229567278928821,
    1.0,
];

pub fn nf4_codebook() -> [f64; 16] {
    NF4_CODEBOOK
}

/// Largest gap between adjacent codebook levels.
pub fn max_codebook_gap() -> f64 {
    NF4_CODEBOOK.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
}

/// Nearest codebook index; ties go to the lower index.
pub fn nearest_code(x: f64) -> u8 {
    let mut best = 0u8;
    let mut best_d = f64::INFINITY;
    for (i, c) in NF4_CODEBOOK.iter().enumerate() {
        let d = (x - c).abs();
        if d < best_d {
            best_d = d;
            best = i as u8;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Nf4Block {
    pub scale: f32,
    /// One code per value; at most [`NF4_BLOCK`].
    pub codes: Vec<u8>,
}

impl Nf4Block {
    pub fn dequantize_into(&self, out: &mut Vec<f64>) {
        let s = self.scale as f64;
        out.extend(self.codes.iter().map(|&c| NF4_CODEBOOK[c as usize] * s));
    }
}

/// Splits `values` into blocks of `block` values (the last may be shorter).
pub fn nf4_quantize(values: &[f64], block: usize) -> Result<Vec<Nf4Block>> {
    if block == 0 {
        return Err(Error::Encode("nf4 block size must be positive".into()));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Encode(format!("non-finite value at index {i}")));
    }
    Ok(values
        .chunks(block)
        .map(|chunk| {
            let absmax = chunk.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let scale = absmax as f32;
            let codes = if scale == 0.0 {
                vec![NF4_ZERO_CODE; chunk.len()]
            } else {
                let s = scale as f64;
                chunk.iter().map(|v| nearest_code(v / s)).collect()
            };
            Nf4Block { scale, codes }
        })
        .collect())
}

pub fn nf4_dequantize(blocks: &[Nf4Block]) -> Vec<f64> {
    let mut out = Vec::with_capacity(blocks.iter().map(|b| b.codes.len()).sum());
    blocks.iter().for_each(|b| b.dequantize_into(&mut out));
    out
}

/// Packed size of `n` values: a 4-byte scale per block plus two codes per byte.
pub fn nf4_packed_len(n: usize, block: usize) -> usize {
    let full = n / block;
    let rest = n % block;
    full * (4 + block.div_ceil(2)) + if rest > 0 { 4 + rest.div_ceil(2) } else { 0 }
}

/// Per block: `scale` as f32 LE, then codes two per byte, low nibble first.
pub fn nf4_pack(blocks: &[Nf4Block], out: &mut Vec<u8>) {
    for b in blocks {
        out.extend_from_slice(&b.scale.to_le_bytes());
        for pair in b.codes.chunks(2) {
            let hi = pair.get(1).copied().unwrap_or(0);
            out.push((pair[0] & 0x0f) | (hi << 4));
        }
    }
}

pub fn nf4_unpack(bytes: &[u8], n: usize, block: usize) -> Result<Vec<Nf4Block>> {
    if bytes.len() != nf4_packed_len(n, block) {
        return Err(Error::Decode(format!(
            "nf4 payload has {} bytes, {n} values need {}",
            bytes.len(),
            nf4_packed_len(n, block)
        )));
    }
    let mut pos = 0;
    let mut remaining = n;
    let mut blocks = Vec::with_capacity(n.div_ceil(block));
    while remaining > 0 {
        let len = remaining.min(block);
        let scale = f32::from_le_bytes(bytes[pos..pos + 4].try_into().expect("4 bytes"));
        pos += 4;
        let packed = &bytes[pos..pos + len.div_ceil(2)];
        pos += packed.len();
        let mut codes = Vec::with_capacity(len);
        for (i, byte) in packed.iter().enumerate() {
            codes.push(byte & 0x0f);
            if 2 * i + 1 < len {
                codes.push(byte >> 4);
            } else if byte >> 4 != 0 {
                return Err(Error::Decode("nonzero padding nibble".into()));
            }
        }
        blocks.push(Nf4Block { scale, codes });
        remaining -= len;
    }
    Ok(blocks)
}
