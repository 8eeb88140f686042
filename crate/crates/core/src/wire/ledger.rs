//! Communication accounting. Message sizes are exact integers:
//! `ceil(Σ params_i · bits_i / 8)` bytes, with bit widths held in 1/64-bit
//! units so 4.5-bit NF4 stays exact.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

/// Bits per parameter, in units of 1/64 bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BitWidth(u64);

impl BitWidth {
    pub const F64: BitWidth = BitWidth(64 * 64);
    pub const F32: BitWidth = BitWidth(32 * 64);
    pub const F16: BitWidth = BitWidth(16 * 64);
    /// 4-bit codes plus a 32-bit scale per 64 values.
    pub const NF4: BitWidth = BitWidth(4 * 64 + 32);

    pub fn from_bits(bits: f64) -> Result<BitWidth> {
        let units = bits * 64.0;
        if !(units >= 0.0) || units.fract() != 0.0 || units > 1e15 {
            return Err(config_err(format!("bit width {bits} is not a multiple of 1/64")));
        }
        Ok(BitWidth(units as u64))
    }

    pub fn bits(self) -> f64 {
        self.0 as f64 / 64.0
    }

    pub fn sixty_fourths(self) -> u64 {
        self.0
    }
}

/// `ceil(Σ params · bits / 8)` over several precision classes.
pub fn payload_bytes(classes: &[(u64, BitWidth)]) -> u64 {
    let total: u128 = classes.iter().map(|(n, b)| *n as u128 * b.0 as u128).sum();
    total.div_ceil(8 * 64) as u64
}

/// Size of a message carrying LoRA and directly-trained base parameters at one width.
pub fn message_bytes(lora_params: u64, base_params: u64, bits: BitWidth) -> u64 {
    payload_bytes(&[(lora_params + base_params, bits)])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Up => "up",
            Direction::Down => "down",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Endpoint {
    Server,
    Client(u32),
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Server => f.write_str("server"),
            Endpoint::Client(id) => write!(f, "client{id}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateMessage {
    pub round: u32,
    pub direction: Direction,
    pub sender: Endpoint,
    pub receiver: Endpoint,
    /// `(parameter count, width)` per precision class.
    pub payload: Vec<(u64, BitWidth)>,
    pub byte_size: u64,
}

impl UpdateMessage {
    pub fn new(round: u32, direction: Direction, client: u32, payload: Vec<(u64, BitWidth)>) -> Self {
        let (sender, receiver) = match direction {
            Direction::Down => (Endpoint::Server, Endpoint::Client(client)),
            Direction::Up => (Endpoint::Client(client), Endpoint::Server),
        };
        let byte_size = payload_bytes(&payload);
        Self { round, direction, sender, receiver, payload, byte_size }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GbConvention {
    /// 1 GB = 10⁹ bytes.
    #[default]
    Decimal,
    /// 1 GB = 2³⁰ bytes.
    Binary,
}

impl GbConvention {
    pub fn bytes_per_gb(self) -> f64 {
        match self {
            GbConvention::Decimal => 1e9,
            GbConvention::Binary => (1u64 << 30) as f64,
        }
    }

    pub fn bytes_per_mb(self) -> f64 {
        match self {
            GbConvention::Decimal => 1e6,
            GbConvention::Binary => (1u64 << 20) as f64,
        }
    }

    pub fn gb(self, bytes: u64) -> f64 {
        bytes as f64 / self.bytes_per_gb()
    }

    pub fn mb(self, bytes: u64) -> f64 {
        bytes as f64 / self.bytes_per_mb()
    }
}

/// Append-only record of every server↔client transmission after the
/// initial model broadcast.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommLedger {
    entries: Vec<UpdateMessage>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerTotal {
    pub bytes: u64,
    pub gb: f64,
    pub messages: usize,
}

impl CommLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, msg: UpdateMessage) {
        self.entries.push(msg);
    }

    pub fn entries(&self) -> &[UpdateMessage] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_bytes(&self) -> u64 {
        self.entries.iter().map(|m| m.byte_size).sum()
    }

    pub fn round_bytes(&self, round: u32) -> u64 {
        self.entries.iter().filter(|m| m.round == round).map(|m| m.byte_size).sum()
    }

    /// `round,direction,sender,receiver,bytes`
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["round", "direction", "sender", "receiver", "bytes"])?;
        for m in &self.entries {
            wtr.write_record([
                m.round.to_string(),
                m.direction.to_string(),
                m.sender.to_string(),
                m.receiver.to_string(),
                m.byte_size.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

pub fn ledger_total(ledger: &CommLedger, convention: GbConvention) -> LedgerTotal {
    let bytes = ledger.total_bytes();
    LedgerTotal { bytes, gb: convention.gb(bytes), messages: ledger.len() }
}
