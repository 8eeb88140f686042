//! Message sizes and NF4 quantization.
//!
//! ```bash
//! cargo run -p pflkit --example comm_cost
//! ```

use pflkit::learners::{Param, ParamSet};
use pflkit::math::Matrix;
use pflkit::wire::{
    decode_frame, encode_frame, ledger_total, message_bytes, nf4_dequantize, nf4_quantize, BitWidth, CommLedger,
    Direction, Frame, GbConvention, Precision, UpdateMessage, NF4_BLOCK,
};

fn main() -> pflkit::Result<()> {
    // rank-6 adapters on 36 query and value projections, plus 2.75M other trainables
    let adapters = 6 * 36 * 2 * 2 * 768;
    for bits in [BitWidth::F32, BitWidth::F16, BitWidth::NF4] {
        println!("{:>4} bits/param: {} bytes per message", bits.bits(), message_bytes(adapters, 2_750_000, bits));
    }

    let mut ledger = CommLedger::new();
    for round in 1..=7 {
        for dir in [Direction::Down, Direction::Up] {
            for client in 0..2 {
                ledger.record(UpdateMessage::new(round, dir, client, vec![(adapters + 2_750_000, BitWidth::F32)]));
            }
        }
    }
    for conv in [GbConvention::Decimal, GbConvention::Binary] {
        let t = ledger_total(&ledger, conv);
        println!("{} messages: {:.4} GB ({conv:?})", t.messages, t.gb);
    }

    let w = Matrix::from_fn(32, 48, |i, j| ((i * 31 + j * 17) % 97) as f64 / 97.0 - 0.5);
    let flat = w.as_slice().to_vec();
    let back = nf4_dequantize(&nf4_quantize(&flat, NF4_BLOCK)?);
    let err = flat.iter().zip(&back).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / flat.iter().map(|a| a * a).sum::<f64>();
    println!("NF4 relative squared error on a 32x48 matrix: {err:.3e}");

    let tensors = ParamSet::new(vec![Param { name: "layer1.lora_a".into(), value: w }]);
    for precision in [Precision::F64, Precision::F32, Precision::Nf4] {
        let frame = Frame { round: 1, direction: Direction::Up, precision, tensors: tensors.clone() };
        let bytes = encode_frame(&frame)?;
        let decoded = decode_frame(&bytes)?;
        println!("{precision:?} frame: {} bytes, max error {:.2e}", bytes.len(), decoded.tensors.sub(&tensors).max_abs());
    }
    Ok(())
}
