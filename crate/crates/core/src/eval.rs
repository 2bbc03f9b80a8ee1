//! Scoring: set-of-entities slot F1, intent accuracy and word error rate.
//!
//! Slot scoring is order-insensitive by construction: predictions and
//! references are compared as multisets of (label, value) pairs, with I-
//! continuations merged into their phrase's value. A malformed decoded
//! sequence contributes its parseable prefix and flags the utterance.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SluError};
use crate::targets::parse_target_lenient;
use crate::vocab::Vocab;

/// One semantic entity as (label, token strings).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityTuple {
    pub label_name: String,
    pub value: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub predicted: usize,
    pub reference: usize,
}

/// Full evaluation report; stable field order for diffable JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub slots: SlotScores,
    pub intent_accuracy: f64,
    pub wer: f64,
    /// Utterances whose decoded sequence failed to parse fully.
    pub flagged_utterances: usize,
    /// WER is always computed against full transcripts, also for entity-only
    /// models.
    pub wer_reference: String,
}

fn counts(entities: &[EntityTuple]) -> BTreeMap<&EntityTuple, usize> {
    let mut m = BTreeMap::new();
    for e in entities {
        *m.entry(e).or_insert(0) += 1;
    }
    m
}

fn check_aligned_ids(pred_ids: &[&str], ref_ids: &[&str]) -> Result<()> {
    let mut seen = std::collections::BTreeSet::new();
    for id in pred_ids {
        if !seen.insert(*id) {
            return Err(SluError::validation(
                "predictions",
                format!("duplicate utterance id `{id}`"),
            ));
        }
    }
    let mut ref_seen = std::collections::BTreeSet::new();
    for id in ref_ids {
        if !ref_seen.insert(*id) {
            return Err(SluError::validation(
                "references",
                format!("duplicate utterance id `{id}`"),
            ));
        }
    }
    if seen != ref_seen {
        return Err(SluError::validation(
            "predictions",
            "utterance ids do not align with references",
        ));
    }
    Ok(())
}

/// Micro-averaged slot precision/recall/F1 over (label, value) multisets.
pub fn slot_f1(
    predictions: &[(String, Vec<EntityTuple>)],
    references: &[(String, Vec<EntityTuple>)],
) -> Result<SlotScores> {
    let pred_ids: Vec<&str> = predictions.iter().map(|(id, _)| id.as_str()).collect();
    let ref_ids: Vec<&str> = references.iter().map(|(id, _)| id.as_str()).collect();
    check_aligned_ids(&pred_ids, &ref_ids)?;
    let ref_by_id: BTreeMap<&str, &Vec<EntityTuple>> = references
        .iter()
        .map(|(id, ents)| (id.as_str(), ents))
        .collect();

    let mut tp = 0usize;
    let mut n_pred = 0usize;
    let mut n_ref = 0usize;
    for (id, pred) in predictions {
        let reference = ref_by_id[id.as_str()];
        n_pred += pred.len();
        n_ref += reference.len();
        let pc = counts(pred);
        let rc = counts(reference);
        for (tuple, &p) in &pc {
            if let Some(&r) = rc.get(tuple) {
                tp += p.min(r);
            }
        }
    }
    let precision = if n_pred > 0 { tp as f64 / n_pred as f64 } else { 0.0 };
    let recall = if n_ref > 0 { tp as f64 / n_ref as f64 } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(SlotScores {
        precision,
        recall,
        f1,
        true_positives: tp,
        predicted: n_pred,
        reference: n_ref,
    })
}

/// Exact-match intent accuracy; a missing prediction counts as wrong.
pub fn intent_accuracy(
    predictions: &[(String, Option<String>)],
    references: &[(String, String)],
) -> Result<f64> {
    let pred_ids: Vec<&str> = predictions.iter().map(|(id, _)| id.as_str()).collect();
    let ref_ids: Vec<&str> = references.iter().map(|(id, _)| id.as_str()).collect();
    check_aligned_ids(&pred_ids, &ref_ids)?;
    let ref_by_id: BTreeMap<&str, &str> = references
        .iter()
        .map(|(id, it)| (id.as_str(), it.as_str()))
        .collect();
    if references.is_empty() {
        return Err(SluError::validation("references", "empty reference corpus"));
    }
    let correct = predictions
        .iter()
        .filter(|(id, p)| p.as_deref() == Some(ref_by_id[id.as_str()]))
        .count();
    Ok(correct as f64 / references.len() as f64)
}

fn edit_distance(a: &[String], b: &[String]) -> usize {
    let (n, m) = (a.len(), b.len());
    let mut prev: Vec<usize> = (0..=m).collect();
    let mut cur = vec![0usize; m + 1];
    for i in 1..=n {
        cur[0] = i;
        for j in 1..=m {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m]
}

/// Corpus word error rate: summed edit distance over summed reference length.
/// May exceed 1.
pub fn wer(hypotheses: &[Vec<String>], references: &[Vec<String>]) -> Result<f64> {
    if hypotheses.len() != references.len() {
        return Err(SluError::validation(
            "hypotheses",
            format!(
                "{} hypotheses vs {} references",
                hypotheses.len(),
                references.len()
            ),
        ));
    }
    if references.is_empty() {
        return Err(SluError::validation("references", "empty reference corpus"));
    }
    for (i, r) in references.iter().enumerate() {
        if r.is_empty() {
            return Err(SluError::validation(
                "references",
                format!("reference {i} is empty"),
            ));
        }
    }
    let mut distance = 0usize;
    let mut total = 0usize;
    for (h, r) in hypotheses.iter().zip(references.iter()) {
        distance += edit_distance(h, r);
        total += r.len();
    }
    Ok(distance as f64 / total as f64)
}

/// Entities, intent and parse flag recovered from a decoded symbol sequence.
pub struct DecodedMeaning {
    pub entities: Vec<EntityTuple>,
    pub intent: Option<String>,
    pub spoken_tokens: Vec<String>,
    pub flagged: bool,
}

/// Interpret decoder output leniently: score the parseable prefix, flag the
/// utterance when the full sequence is malformed.
pub fn decoded_meaning(symbols: &[u32], vocab: &Vocab) -> Result<DecodedMeaning> {
    let lenient = parse_target_lenient(symbols, vocab)?;
    let flagged = lenient.error.is_some() || lenient.target.is_none();
    let phrases = match &lenient.target {
        Some(t) => &t.phrases,
        None => &lenient.prefix_phrases,
    };
    let entities = phrases
        .iter()
        .map(|p| EntityTuple {
            label_name: p.phrase.label_name.clone(),
            value: p
                .phrase
                .spoken_token_ids
                .iter()
                .map(|&t| vocab.token(t).to_string())
                .collect(),
        })
        .collect();
    let intent = lenient
        .intent
        .and_then(|id| vocab.intent_name(id).map(str::to_string));
    let upto = match lenient.error {
        Some((pos, _)) => pos,
        None => symbols.len(),
    };
    let spoken_tokens = symbols[..upto]
        .iter()
        .filter(|&&s| vocab.kind(s) == crate::vocab::SymbolKind::Spoken)
        .map(|&s| vocab.token(s).to_string())
        .collect();
    Ok(DecodedMeaning {
        entities,
        intent,
        spoken_tokens,
        flagged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tup(label: &str, value: &[&str]) -> EntityTuple {
        EntityTuple {
            label_name: label.to_string(),
            value: value.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn one(id: &str, ents: Vec<EntityTuple>) -> (String, Vec<EntityTuple>) {
        (id.to_string(), ents)
    }

    #[test]
    fn identical_sets_score_one() {
        let refs = vec![one(
            "u1",
            vec![tup("toloc.city_name", &["dallas"]), tup("airline_name", &["delta"])],
        )];
        let s = slot_f1(&refs, &refs).unwrap();
        assert_eq!(s.f1, 1.0);
        assert_eq!(s.true_positives, 2);
    }

    #[test]
    fn worked_multiset_example_scores_four_sevenths() {
        let pred = vec![one("u1", vec![tup("a", &["a"]), tup("b", &["b"]), tup("c", &["c"])])];
        let refs = vec![one(
            "u1",
            vec![
                tup("a", &["a"]),
                tup("b", &["b"]),
                tup("d", &["d"]),
                tup("e", &["e"]),
            ],
        )];
        let s = slot_f1(&pred, &refs).unwrap();
        assert!((s.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.recall - 0.5).abs() < 1e-12);
        assert!((s.f1 - 4.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn permutations_do_not_change_f1() {
        let pred = vec![one(
            "u1",
            vec![
                tup("a", &["x"]),
                tup("b", &["y", "z"]),
                tup("c", &["w"]),
            ],
        )];
        let refs = vec![one(
            "u1",
            vec![tup("b", &["y", "z"]), tup("a", &["x"]), tup("c", &["q"])],
        )];
        let base = slot_f1(&pred, &refs).unwrap();
        let mut permuted = pred.clone();
        permuted[0].1.reverse();
        let swapped = slot_f1(&permuted, &refs).unwrap();
        assert_eq!(base, swapped);
    }

    #[test]
    fn duplicate_counts_use_min_matching() {
        let pred = vec![one("u1", vec![tup("a", &["x"]), tup("a", &["x"])])];
        let refs = vec![one("u1", vec![tup("a", &["x"])])];
        let s = slot_f1(&pred, &refs).unwrap();
        assert_eq!(s.true_positives, 1);
        assert_eq!(s.predicted, 2);
    }

    #[test]
    fn swapping_roles_swaps_precision_and_recall() {
        let pred = vec![one("u1", vec![tup("a", &["x"]), tup("b", &["y"])])];
        let refs = vec![one("u1", vec![tup("a", &["x"]), tup("c", &["z"]), tup("d", &["w"])])];
        let fwd = slot_f1(&pred, &refs).unwrap();
        let rev = slot_f1(&refs, &pred).unwrap();
        assert_eq!(fwd.precision, rev.recall);
        assert_eq!(fwd.recall, rev.precision);
        assert!((fwd.f1 - rev.f1).abs() < 1e-12);
    }

    #[test]
    fn duplicate_or_misaligned_ids_rejected() {
        let refs = vec![one("u1", vec![]), one("u1", vec![])];
        assert!(slot_f1(&refs, &refs).is_err());
        let pred = vec![one("u2", vec![])];
        let refs = vec![one("u1", vec![])];
        assert!(slot_f1(&pred, &refs).is_err());
    }

    #[test]
    fn intent_accuracy_counts() {
        let refs: Vec<(String, String)> = (0..4)
            .map(|i| (format!("u{i}"), "flight".to_string()))
            .collect();
        let all: Vec<(String, Option<String>)> = refs
            .iter()
            .map(|(id, it)| (id.clone(), Some(it.clone())))
            .collect();
        assert_eq!(intent_accuracy(&all, &refs).unwrap(), 1.0);
        let none: Vec<(String, Option<String>)> =
            refs.iter().map(|(id, _)| (id.clone(), None)).collect();
        assert_eq!(intent_accuracy(&none, &refs).unwrap(), 0.0);
        let mut three = all.clone();
        three[2].1 = Some("airfare".to_string());
        assert_eq!(intent_accuracy(&three, &refs).unwrap(), 0.75);
    }

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn wer_examples() {
        assert_eq!(
            wer(&[words("a b c")], &[words("a b c")]).unwrap(),
            0.0
        );
        assert_eq!(
            wer(&[Vec::new()], &[words("a b c d e")]).unwrap(),
            1.0
        );
        let w = wer(&[words("a b x")], &[words("a b c d")]).unwrap();
        assert_eq!(w, 0.5);
        // exceeding 1.0 is legal
        let w = wer(&[words("x y z q r s")], &[words("a")]).unwrap();
        assert!(w > 1.0);
        assert!(wer(&[], &[]).is_err());
        assert!(wer(&[words("a")], &[Vec::new()]).is_err());
    }

    #[test]
    fn decoded_meaning_scores_parseable_prefix() {
        let (vocab, utt) = crate::targets::tests::example_fixture();
        let spoken =
            crate::targets::make_target(&utt, &vocab, crate::targets::Variant::SpokenOrder, None)
                .unwrap();
        let good = decoded_meaning(&spoken.symbols, &vocab).unwrap();
        assert!(!good.flagged);
        assert_eq!(good.entities.len(), 3);
        assert_eq!(good.intent.as_deref(), Some("flight"));

        // Corrupt the tail: a dangling I- label after the first phrase.
        let mut bad = spoken.symbols[..2].to_vec();
        bad.push(vocab.id("I-fromloc.city_name").unwrap());
        let lenient = decoded_meaning(&bad, &vocab).unwrap();
        assert!(lenient.flagged);
        assert_eq!(lenient.entities.len(), 1);
        assert_eq!(lenient.intent, None);
    }
}
