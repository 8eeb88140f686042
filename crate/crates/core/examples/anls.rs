//! Answer scoring: exact-match accuracy and ANLS.
//!
//! ```bash
//! cargo run -p pflkit --example anls
//! ```

use pflkit::metrics::{anls, evaluate, normalized_levenshtein, Normalization};

fn main() {
    let pairs = [
        ("Invoice 2041", "invoice 2041"),
        ("invoce 2041", "invoice 2041"),
        ("total 18", "total 81"),
        ("receipt", "balance due 12"),
    ];
    for (pred, gold) in pairs {
        println!(
            "{pred:>14} vs {gold:<15} NL {:.3}  ANLS {:.3}",
            normalized_levenshtein(&pred.to_lowercase(), gold),
            anls(pred, &[gold])
        );
    }
    let r = evaluate(pairs, Normalization::default());
    println!("accuracy {:.3}, ANLS {:.3} over {} answers", r.accuracy, r.anls, r.n);

    let strict = Normalization { lowercase: false, trim: false };
    println!("case-sensitive accuracy {:.3}", evaluate(pairs, strict).accuracy);
}
