//! Parameter messages: framing, the NF4 codec and the communication ledger.

mod frame;
mod ledger;
pub mod nf4;

pub use frame::{decode_frame, encode_frame, transmit, Frame, Precision, FRAME_MAGIC, HEADER_LEN};
pub use ledger::{
    ledger_total, message_bytes, payload_bytes, BitWidth, CommLedger, Direction, Endpoint, GbConvention, LedgerTotal,
    UpdateMessage,
};
pub use nf4::{nf4_codebook, nf4_dequantize, nf4_quantize, Nf4Block, NF4_BLOCK, NF4_CODEBOOK};
