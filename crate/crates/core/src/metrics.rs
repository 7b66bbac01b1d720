//! Span-level micro precision / recall / F1.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::tagscheme::{decode_spans, TagSequence, TagSet};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

impl Scores {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = ratio(tp as f64, (tp + fp) as f64);
        let recall = ratio(tp as f64, (tp + fn_) as f64);
        let f1 = ratio(2.0 * precision * recall, precision + recall);
        Scores {
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
        }
    }

    /// Flat `(key, value)` pairs for report files.
    pub fn to_record(&self) -> Vec<(&'static str, String)> {
        vec![
            ("precision", format!("{:.6}", self.precision)),
            ("recall", format!("{:.6}", self.recall)),
            ("f1", format!("{:.6}", self.f1)),
            ("tp", self.tp.to_string()),
            ("fp", self.fp.to_string()),
            ("fn", self.fn_.to_string()),
        ]
    }
}

/// Exact-match span counting pooled over all sentences.
pub fn micro_prf(gold: &[TagSequence], pred: &[TagSequence], tagset: &TagSet) -> Result<Scores> {
    if gold.len() != pred.len() {
        return Err(Error::LengthMismatch(format!(
            "{} gold sentences vs {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(Error::LengthMismatch(format!(
                "sentence {i}: {} gold tags vs {} predicted",
                g.len(),
                p.len()
            )));
        }
        let gs: HashSet<_> = decode_spans(g, tagset).into_iter().collect();
        let ps: HashSet<_> = decode_spans(p, tagset).into_iter().collect();
        let hit = gs.intersection(&ps).count();
        tp += hit;
        fp += ps.len() - hit;
        fn_ += gs.len() - hit;
    }
    Ok(Scores::from_counts(tp, fp, fn_))
}

/// Mean P/R/F1 over the last `min(m, len)` entries; counts are summed.
pub fn average_last(history: &[Scores], m: usize) -> Scores {
    assert!(!history.is_empty(), "average_last needs a non-empty history");
    let take = m.clamp(1, history.len());
    let tail = &history[history.len() - take..];
    let n = take as f64;
    Scores {
        precision: tail.iter().map(|s| s.precision).sum::<f64>() / n,
        recall: tail.iter().map(|s| s.recall).sum::<f64>() / n,
        f1: tail.iter().map(|s| s.f1).sum::<f64>() / n,
        tp: tail.iter().map(|s| s.tp).sum(),
        fp: tail.iter().map(|s| s.fp).sum(),
        fn_: tail.iter().map(|s| s.fn_).sum(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tagscheme::{encode_spans, Span};
    use proptest::prelude::*;

    fn ts() -> TagSet {
        TagSet::new(["PER", "LOC", "ORG"]).unwrap()
    }

    #[test]
    fn identity_and_all_outside() {
        let ts = ts();
        let gold = vec![
            encode_spans(&[Span::new(0, 2, "PER")], 4, &ts).unwrap(),
            encode_spans(&[Span::new(1, 2, "LOC"), Span::new(2, 3, "LOC")], 3, &ts).unwrap(),
        ];
        let s = micro_prf(&gold, &gold, &ts).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        let none: Vec<_> = gold.iter().map(|g| TagSequence::outside(g.len())).collect();
        let s = micro_prf(&gold, &none, &ts).unwrap();
        assert_eq!((s.tp, s.fp, s.fn_), (0, 0, 3));
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn type_mismatch_counts_both_ways() {
        let ts = ts();
        let gold = encode_spans(&[Span::new(0, 2, "PER"), Span::new(3, 4, "LOC")], 5, &ts).unwrap();
        let pred = encode_spans(&[Span::new(0, 2, "PER"), Span::new(3, 4, "ORG")], 5, &ts).unwrap();
        let s = micro_prf(&[gold], &[pred], &ts).unwrap();
        assert_eq!((s.tp, s.fp, s.fn_), (1, 1, 1));
        assert_eq!((s.precision, s.recall, s.f1), (0.5, 0.5, 0.5));
    }

    #[test]
    fn length_mismatch_errors() {
        let ts = ts();
        assert!(micro_prf(&[TagSequence::outside(2)], &[], &ts).is_err());
        assert!(micro_prf(&[TagSequence::outside(2)], &[TagSequence::outside(3)], &ts).is_err());
    }

    #[test]
    fn average_last_examples() {
        let s = |f1: f64| Scores {
            f1,
            ..Scores::default()
        };
        assert_eq!(average_last(&[s(0.4)], 5).f1, 0.4);
        assert!((average_last(&[s(0.5), s(0.7)], 2).f1 - 0.6).abs() < 1e-12);
        let table = [58.47, 58.96, 58.90, 58.49, 59.11, 59.20].map(s);
        assert!((average_last(&table, 5).f1 - 58.932).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn bounds_and_permutation(
            raw in proptest::collection::vec(
                proptest::collection::vec((0usize..7, 0usize..7), 1..12), 1..8),
            rot in 0usize..8,
        ) {
            let ts = ts();
            let gold: Vec<_> = raw.iter().map(|r| TagSequence(r.iter().map(|x| x.0).collect())).collect();
            let pred: Vec<_> = raw.iter().map(|r| TagSequence(r.iter().map(|x| x.1).collect())).collect();
            let s = micro_prf(&gold, &pred, &ts).unwrap();
            for v in [s.precision, s.recall, s.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            if s.precision > 0.0 && s.recall > 0.0 {
                prop_assert!(s.f1 <= s.precision.max(s.recall) + 1e-12);
                prop_assert!(s.f1 >= s.precision.min(s.recall) - 1e-12);
            }
            let k = rot % gold.len();
            let mut g2 = gold.clone();
            let mut p2 = pred.clone();
            g2.rotate_left(k);
            p2.rotate_left(k);
            let s2 = micro_prf(&g2, &p2, &ts).unwrap();
            prop_assert_eq!((s.tp, s.fp, s.fn_), (s2.tp, s2.fp, s2.fn_));
        }
    }
}
