//! Evaluation metrics and learning-curve summaries.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{DalError, Result};

/// Fraction of positions where `predictions` equals `gold`.
pub fn accuracy(predictions: &[usize], gold: &[usize]) -> Result<f64> {
    if predictions.len() != gold.len() {
        return Err(DalError::invalid(format!(
            "accuracy: {} predictions vs {} gold labels",
            predictions.len(),
            gold.len()
        )));
    }
    if gold.is_empty() {
        return Ok(0.0);
    }
    let hits = predictions.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / gold.len() as f64)
}

/// A typed token span `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

enum Bio<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
}

fn parse_tag(tag: &str) -> Result<Bio<'_>> {
    if tag == "O" {
        return Ok(Bio::Outside);
    }
    match tag.split_once('-') {
        Some(("B", ty)) if !ty.is_empty() => Ok(Bio::Begin(ty)),
        Some(("I", ty)) if !ty.is_empty() => Ok(Bio::Inside(ty)),
        _ => Err(DalError::invalid(format!("unknown tag `{tag}`"))),
    }
}

/// Decodes BIO tags into spans. An `I-X` that does not continue an open `X`
/// span starts a new one.
pub fn decode_spans(tags: &[&str]) -> Result<Vec<Span>> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, &str)> = None;
    for (i, tag) in tags.iter().enumerate() {
        let parsed = parse_tag(tag)?;
        let continues = matches!((&parsed, open), (Bio::Inside(ty), Some((_, cur))) if *ty == cur);
        if continues {
            continue;
        }
        if let Some((start, ty)) = open.take() {
            spans.push(Span { start, end: i, label: ty.to_owned() });
        }
        open = match parsed {
            Bio::Outside => None,
            Bio::Begin(ty) | Bio::Inside(ty) => Some((i, ty)),
        };
    }
    if let Some((start, ty)) = open {
        spans.push(Span { start, end: tags.len(), label: ty.to_owned() });
    }
    Ok(spans)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpanScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Exact-match span precision, recall and F1 over a corpus of tag sequences.
pub fn span_f1<S: AsRef<str>>(predicted: &[Vec<S>], gold: &[Vec<S>]) -> Result<SpanScores> {
    if predicted.len() != gold.len() {
        return Err(DalError::invalid(format!("span_f1: {} predicted vs {} gold sequences", predicted.len(), gold.len())));
    }
    let (mut tp, mut n_pred, mut n_gold) = (0usize, 0usize, 0usize);
    for (i, (p, g)) in predicted.iter().zip(gold).enumerate() {
        if p.len() != g.len() {
            return Err(DalError::invalid(format!("span_f1: sequence {i} has {} predicted vs {} gold tags", p.len(), g.len())));
        }
        let p: Vec<&str> = p.iter().map(AsRef::as_ref).collect();
        let g: Vec<&str> = g.iter().map(AsRef::as_ref).collect();
        let ps: HashSet<Span> = decode_spans(&p)?.into_iter().collect();
        let gs: HashSet<Span> = decode_spans(&g)?.into_iter().collect();
        tp += ps.intersection(&gs).count();
        n_pred += ps.len();
        n_gold += gs.len();
    }
    let precision = if n_pred == 0 { 0.0 } else { tp as f64 / n_pred as f64 };
    let recall = if n_gold == 0 { 0.0 } else { tp as f64 / n_gold as f64 };
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    Ok(SpanScores { precision, recall, f1 })
}

/// Trapezoidal area under `(fraction, metric)` points, normalised by the
/// covered fraction range.
pub fn curve_auc(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(DalError::invalid("curve_auc needs at least two points"));
    }
    if points.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(DalError::invalid("curve_auc: fractions must be strictly increasing"));
    }
    let area: f64 = points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0).sum();
    Ok(area / (points[points.len() - 1].0 - points[0].0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub fraction: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub points: Vec<CurvePoint>,
    pub auc: f64,
}

/// Pointwise mean and sample standard deviation across seeds. Each curve is a
/// list of `(fraction, metric)`; the fraction reported is the seed mean.
pub fn aggregate_seeds(curves: &[Vec<(f64, f64)>]) -> Result<CurveSummary> {
    let first = curves.first().ok_or_else(|| DalError::invalid("aggregate_seeds: no curves"))?;
    if curves.iter().any(|c| c.len() != first.len()) {
        return Err(DalError::invalid("aggregate_seeds: curves have different round schedules"));
    }
    let n = curves.len() as f64;
    let points: Vec<CurvePoint> = (0..first.len())
        .map(|i| {
            let fraction = curves.iter().map(|c| c[i].0).sum::<f64>() / n;
            let mean = curves.iter().map(|c| c[i].1).sum::<f64>() / n;
            let std = if curves.len() < 2 {
                0.0
            } else {
                (curves.iter().map(|c| (c[i].1 - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            };
            CurvePoint { fraction, mean, std }
        })
        .collect();
    let auc = if points.len() >= 2 {
        curve_auc(&points.iter().map(|p| (p.fraction, p.mean)).collect::<Vec<_>>())?
    } else {
        points.first().map_or(0.0, |p| p.mean)
    };
    Ok(CurveSummary { points, auc })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tags(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_owned).collect()
    }

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy(&[1, 2], &[1, 2]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 0], &[1, 1]).unwrap(), 0.0);
        assert_eq!(accuracy(&[1, 2, 3, 4], &[1, 2, 3, 0]).unwrap(), 0.75);
        assert!(accuracy(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn identical_predictions_score_one() {
        let g = vec![tags("B-PER I-PER O B-LOC")];
        let s = span_f1(&g, &g).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn truncated_span_is_a_miss() {
        let s = span_f1(&[tags("B-PER O O")], &[tags("B-PER I-PER O")]).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn half_right_fixture() {
        // gold spans (0,2,PER) and (3,4,LOC); pred recovers LOC plus a spurious ORG.
        let gold = vec![tags("B-PER I-PER O B-LOC O")];
        let pred = vec![tags("O O O B-LOC B-ORG")];
        let s = span_f1(&pred, &gold).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (0.5, 0.5, 0.5));
    }

    #[test]
    fn repair_rule_turns_orphan_inside_into_begin() {
        let spans = decode_spans(&["O", "I-PER", "I-PER", "I-LOC", "B-LOC", "I-LOC"]).unwrap();
        assert_eq!(
            spans,
            vec![
                Span { start: 1, end: 3, label: "PER".into() },
                Span { start: 3, end: 4, label: "LOC".into() },
                Span { start: 4, end: 6, label: "LOC".into() },
            ]
        );
    }

    #[test]
    fn unknown_tag_rejected() {
        assert!(span_f1(&[tags("X-PER")], &[tags("O")]).is_err());
        assert!(span_f1(&[tags("B-")], &[tags("O")]).is_err());
    }

    #[test]
    fn auc_reference_values() {
        assert!((curve_auc(&[(0.0, 0.3), (0.5, 0.3), (1.0, 0.3)]).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(curve_auc(&[(0.0, 0.0), (1.0, 1.0)]).unwrap(), 0.5);
        let v = curve_auc(&[(0.02, 0.5), (0.04, 0.7), (0.06, 0.8)]).unwrap();
        assert!((v - 0.675).abs() < 1e-12);
        assert!(curve_auc(&[(0.1, 0.0), (0.1, 1.0)]).is_err());
    }

    #[test]
    fn aggregate_reference_values() {
        let one = aggregate_seeds(&[vec![(0.1, 0.4), (0.2, 0.5)]]).unwrap();
        assert!(one.points.iter().all(|p| p.std == 0.0));
        let two = aggregate_seeds(&[vec![(0.1, 0.4), (0.2, 0.5)], vec![(0.1, 0.6), (0.2, 0.5)]]).unwrap();
        assert!((two.points[0].mean - 0.5).abs() < 1e-15);
        assert!((two.points[0].std - 0.02f64.sqrt()).abs() < 1e-12);
        let swapped = aggregate_seeds(&[vec![(0.1, 0.6), (0.2, 0.5)], vec![(0.1, 0.4), (0.2, 0.5)]]).unwrap();
        assert_eq!(two, swapped);
        assert!(aggregate_seeds(&[vec![(0.1, 0.4)], vec![(0.1, 0.4), (0.2, 0.1)]]).is_err());
    }

    fn bio_strategy() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec(prop::sample::select(vec!["O", "B-PER", "I-PER", "B-LOC", "I-LOC"]), 1..12)
            .prop_map(|v| v.into_iter().map(str::to_owned).collect())
    }

    proptest! {
        #[test]
        fn swapping_sides_swaps_precision_and_recall(pairs in prop::collection::vec((bio_strategy(), bio_strategy()), 1..5)) {
            let (a, b): (Vec<Vec<String>>, Vec<Vec<String>>) = pairs
                .into_iter()
                .map(|(x, mut y)| { y.resize(x.len(), "O".to_owned()); (x, y) })
                .unzip();
            let ab = span_f1(&a, &b).unwrap();
            let ba = span_f1(&b, &a).unwrap();
            prop_assert_eq!(ab.precision, ba.recall);
            prop_assert_eq!(ab.recall, ba.precision);
            prop_assert!(ab.f1 <= 1.0 && (ab.f1 - ba.f1).abs() < 1e-12);
        }

        #[test]
        fn auc_ignores_collinear_insertions(ys in prop::collection::vec(0.0f64..1.0, 2..6), t in 0.01f64..0.99, at in 0usize..5) {
            let pts: Vec<(f64, f64)> = ys.iter().enumerate().map(|(i, &y)| (i as f64 * 0.1, y)).collect();
            let k = at % (pts.len() - 1);
            let (a, b) = (pts[k], pts[k + 1]);
            let mid = (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1));
            let mut with = pts.clone();
            with.insert(k + 1, mid);
            prop_assert!((curve_auc(&pts).unwrap() - curve_auc(&with).unwrap()).abs() < 1e-12);
        }
    }
}
