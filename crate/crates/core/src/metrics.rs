//! Answer-level utility metrics: exact-match accuracy and ANLS.

use serde::{Deserialize, Serialize};

/// Standard ANLS threshold: similarities with normalized distance at or
/// above it score zero.
pub const ANLS_TAU: f64 = 0.5;

/// Unit-cost edit distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// How answers are canonicalized before comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Normalization {
    pub lowercase: bool,
    pub trim: bool,
}

impl Default for Normalization {
    fn default() -> Self {
        Self { lowercase: true, trim: true }
    }
}

impl Normalization {
    pub fn apply(&self, s: &str) -> String {
        let s = if self.trim { s.trim() } else { s };
        if self.lowercase {
            s.to_lowercase()
        } else {
            s.to_string()
        }
    }
}

/// Normalized Levenshtein distance in `[0, 1]`.
pub fn normalized_levenshtein(a: &str, b: &str) -> f64 {
    let len = a.chars().count().max(b.chars().count());
    if len == 0 {
        return 0.0;
    }
    levenshtein(a, b) as f64 / len as f64
}

/// Per-question ANLS: best `1 − NL` over the gold answers, zeroed at `NL ≥ tau`.
///
/// Panics on an empty gold list.
pub fn anls_with(pred: &str, golds: &[&str], tau: f64, norm: Normalization) -> f64 {
    assert!(!golds.is_empty(), "anls requires at least one gold answer");
    let pred = norm.apply(pred);
    golds
        .iter()
        .map(|g| {
            let nl = normalized_levenshtein(&pred, &norm.apply(g));
            if nl >= tau {
                0.0
            } else {
                1.0 - nl
            }
        })
        .fold(0.0, f64::max)
}

pub fn anls(pred: &str, golds: &[&str]) -> f64 {
    anls_with(pred, golds, ANLS_TAU, Normalization::default())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    pub anls: f64,
    pub n: usize,
}

/// Dataset-level accuracy and ANLS (means of per-question scores).
pub fn evaluate<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>, norm: Normalization) -> EvalResult {
    let mut n = 0usize;
    let mut acc = 0.0;
    let mut an = 0.0;
    for (pred, gold) in pairs {
        n += 1;
        if norm.apply(pred) == norm.apply(gold) {
            acc += 1.0;
        }
        an += anls_with(pred, &[gold], ANLS_TAU, norm);
    }
    if n == 0 {
        return EvalResult { accuracy: 0.0, anls: 0.0, n };
    }
    EvalResult { accuracy: acc / n as f64, anls: an / n as f64, n }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn levenshtein_examples() {
        assert_eq!(levenshtein("", "abc"), 3);
        assert_eq!(levenshtein("hello", "hella"), 1);
        assert_eq!(levenshtein("kitten", "sitting"), 3);
    }

    #[test]
    fn anls_examples() {
        assert_eq!(anls("hello", &["hello"]), 1.0);
        assert!((anls("hella", &["hello"]) - 0.8).abs() < 1e-12);
        assert_eq!(anls("xyz", &["hello"]), 0.0);
        assert_eq!(anls("  Hello ", &["hello"]), 1.0);
        assert!((anls("hella", &["nope", "hello"]) - 0.8).abs() < 1e-12);
        let strict = Normalization { lowercase: false, trim: false };
        assert!(anls_with("Hello", &["hello"], ANLS_TAU, strict) < 1.0);
    }

    #[test]
    fn evaluate_means() {
        let r = evaluate([("hello", "hello"), ("hella", "hello"), ("xyz", "hello")], Normalization::default());
        assert_eq!(r.n, 3);
        assert!((r.accuracy - 1.0 / 3.0).abs() < 1e-12);
        assert!((r.anls - 1.8 / 3.0).abs() < 1e-12);
        assert!(r.accuracy <= r.anls);
    }

    proptest! {
        #[test]
        fn anls_bounds_and_identity(a in "[a-c ]{0,10}", b in "[a-c ]{0,10}") {
            let s = anls(&a, &[&b]);
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert_eq!(anls(&a, &[&a]), 1.0);
            prop_assert_eq!(levenshtein(&a, &b), levenshtein(&b, &a));
        }

        #[test]
        fn triangle_inequality(a in "[ab]{0,8}", b in "[ab]{0,8}", c in "[ab]{0,8}") {
            prop_assert!(levenshtein(&a, &c) <= levenshtein(&a, &b) + levenshtein(&b, &c));
        }
    }
}
