//! Target sequences for the four ground-truth variants and their parser.
//!
//! A target interleaves spoken tokens with their entity labels (word first,
//! then label; the first label of a phrase is B-tagged, continuations are
//! I-tagged) and always ends with exactly one intent token.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Utterance};
use crate::error::{Result, SluError};
use crate::rng::{hash_str, stream};
use crate::vocab::{SymbolKind, Vocab};

const TAG_EPOCH_TARGETS: u64 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    FullTranscript,
    SpokenOrder,
    AlphabeticOrder,
    RandomOrder,
    /// Spoken order reestablished from an alignment, not from ground truth.
    EstimatedSpokenOrder,
}

impl Variant {
    pub fn parse_cli(s: &str) -> Result<Variant> {
        match s {
            "full" => Ok(Variant::FullTranscript),
            "spoken" => Ok(Variant::SpokenOrder),
            "alphabetic" => Ok(Variant::AlphabeticOrder),
            "random" => Ok(Variant::RandomOrder),
            _ => Err(SluError::validation(
                "variant",
                format!("unknown variant `{s}` (full|spoken|alphabetic|random)"),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetSequence {
    pub symbols: Vec<u32>,
    pub variant: Variant,
}

/// One entity phrase: its label name, its spoken tokens and, when known, its
/// position in spoken order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SluPhrase {
    pub label_name: String,
    pub spoken_token_ids: Vec<u32>,
    pub original_index: Option<usize>,
}

/// A phrase recovered by the parser, with its symbol span [start, end) and
/// the output positions of its spoken tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedPhrase {
    pub phrase: SluPhrase,
    pub span: (usize, usize),
    pub spoken_positions: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedTarget {
    pub phrases: Vec<ParsedPhrase>,
    pub intent: u32,
    /// Total symbol count of the parsed sequence.
    pub len: usize,
}

fn phrases_of(utt: &Utterance) -> Vec<SluPhrase> {
    utt.entities
        .iter()
        .enumerate()
        .map(|(i, ent)| SluPhrase {
            label_name: ent.label_name.clone(),
            spoken_token_ids: utt.transcript[ent.start..ent.end].to_vec(),
            original_index: Some(i),
        })
        .collect()
}

fn emit_phrase(out: &mut Vec<u32>, phrase: &SluPhrase, vocab: &Vocab) -> Result<()> {
    for (k, &tok) in phrase.spoken_token_ids.iter().enumerate() {
        out.push(tok);
        let label = if k == 0 {
            vocab.b_label_id(&phrase.label_name)
        } else {
            vocab.i_label_id(&phrase.label_name)
        };
        out.push(label.ok_or_else(|| {
            SluError::validation(
                "label_name",
                format!("no label tokens for `{}`", phrase.label_name),
            )
        })?);
    }
    Ok(())
}

/// Sort phrase indices alphabetically (byte-wise) by label name; ties keep
/// the incoming order.
fn alphabetic_order(phrases: &[SluPhrase]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..phrases.len()).collect();
    idx.sort_by(|&a, &b| phrases[a].label_name.cmp(&phrases[b].label_name));
    idx
}

/// Build the target for one utterance.
/// `rng` is required for (and only for) `Variant::RandomOrder`.
pub fn make_target(
    utt: &Utterance,
    vocab: &Vocab,
    variant: Variant,
    rng: Option<&mut ChaCha12Rng>,
) -> Result<TargetSequence> {
    if utt.entities.is_empty() && variant != Variant::FullTranscript {
        return Err(SluError::validation(
            "utterance",
            format!(
                "utterance {} has no entities; cannot build an entity-only target",
                utt.id
            ),
        ));
    }
    let mut symbols = Vec::new();
    match variant {
        Variant::FullTranscript => {
            let mut ent_iter = utt.entities.iter().peekable();
            let mut pos = 0;
            while pos < utt.transcript.len() {
                if let Some(ent) = ent_iter.peek() {
                    if ent.start == pos {
                        let phrase = SluPhrase {
                            label_name: ent.label_name.clone(),
                            spoken_token_ids: utt.transcript[ent.start..ent.end].to_vec(),
                            original_index: None,
                        };
                        emit_phrase(&mut symbols, &phrase, vocab)?;
                        pos = ent.end;
                        ent_iter.next();
                        continue;
                    }
                }
                symbols.push(utt.transcript[pos]);
                pos += 1;
            }
        }
        Variant::SpokenOrder => {
            for phrase in phrases_of(utt) {
                emit_phrase(&mut symbols, &phrase, vocab)?;
            }
        }
        Variant::AlphabeticOrder => {
            let phrases = phrases_of(utt);
            for i in alphabetic_order(&phrases) {
                emit_phrase(&mut symbols, &phrases[i], vocab)?;
            }
        }
        Variant::RandomOrder => {
            let rng = rng.ok_or_else(|| {
                SluError::validation("rng", "RandomOrder requires an rng stream")
            })?;
            let phrases = phrases_of(utt);
            let mut idx: Vec<usize> = (0..phrases.len()).collect();
            // Fisher-Yates
            for i in (1..idx.len()).rev() {
                let j = rng.random_range(0..=i);
                idx.swap(i, j);
            }
            for i in idx {
                emit_phrase(&mut symbols, &phrases[i], vocab)?;
            }
        }
        Variant::EstimatedSpokenOrder => {
            return Err(SluError::validation(
                "variant",
                "estimated spoken order is produced by alignment, not make_target",
            ));
        }
    }
    symbols.push(utt.intent);
    Ok(TargetSequence { symbols, variant })
}

/// Parse a symbol sequence into phrases, spoken positions and intent.
/// Rejects anything outside the target grammar with a position-bearing error.
pub fn parse_target(symbols: &[u32], vocab: &Vocab) -> Result<ParsedTarget> {
    let parsed = parse_target_lenient(symbols, vocab)?;
    match parsed.error {
        Some((pos, reason)) => Err(SluError::parse(pos, reason)),
        None => parsed
            .target
            .ok_or_else(|| SluError::parse(symbols.len(), "missing intent token".to_string())),
    }
}

/// Result of a lenient parse: everything recovered up to the first violation.
#[derive(Clone, Debug)]
pub struct LenientParse {
    /// Complete parse when the full sequence is well formed.
    pub target: Option<ParsedTarget>,
    /// Phrases completed before any error.
    pub prefix_phrases: Vec<ParsedPhrase>,
    /// Intent if one was seen at the final position.
    pub intent: Option<u32>,
    pub error: Option<(usize, String)>,
}

/// Scan a (possibly malformed) sequence, keeping the parseable prefix.
pub fn parse_target_lenient(symbols: &[u32], vocab: &Vocab) -> Result<LenientParse> {
    struct Open {
        phrase: SluPhrase,
        start: usize,
        spoken_positions: Vec<usize>,
    }
    let mut phrases: Vec<ParsedPhrase> = Vec::new();
    let mut open: Option<Open> = None;
    let mut intent: Option<u32> = None;
    let mut error: Option<(usize, String)> = None;

    let close = |open: &mut Option<Open>, phrases: &mut Vec<ParsedPhrase>, end: usize| {
        if let Some(o) = open.take() {
            phrases.push(ParsedPhrase {
                phrase: o.phrase,
                span: (o.start, end),
                spoken_positions: o.spoken_positions,
            });
        }
    };

    let mut pos = 0;
    while pos < symbols.len() {
        let sym = symbols[pos];
        if !vocab.contains_id(sym) {
            error = Some((pos, format!("symbol id {sym} outside vocab")));
            break;
        }
        match vocab.kind(sym) {
            SymbolKind::Blank | SymbolKind::Start => {
                error = Some((pos, format!("reserved symbol `{}`", vocab.token(sym))));
                break;
            }
            SymbolKind::Intent => {
                if pos != symbols.len() - 1 {
                    error = Some((pos, "intent token before final position".to_string()));
                    break;
                }
                close(&mut open, &mut phrases, pos);
                intent = Some(sym);
                pos += 1;
            }
            SymbolKind::Label => {
                error = Some((pos, "label token without preceding spoken token".to_string()));
                break;
            }
            SymbolKind::Spoken => {
                // Lookahead decides whether this word starts a phrase,
                // continues one, or is a carrier word.
                let next = symbols.get(pos + 1).copied();
                match next.map(|n| (n, vocab.kind(n))) {
                    Some((label, SymbolKind::Label)) => {
                        let name = vocab.label_entity_name(label).unwrap().to_string();
                        if vocab.is_b_label(label) {
                            close(&mut open, &mut phrases, pos);
                            open = Some(Open {
                                phrase: SluPhrase {
                                    label_name: name,
                                    spoken_token_ids: vec![sym],
                                    original_index: None,
                                },
                                start: pos,
                                spoken_positions: vec![pos],
                            });
                        } else {
                            // I- label: must continue an open phrase of the same name.
                            match &mut open {
                                Some(o) if o.phrase.label_name == name => {
                                    o.phrase.spoken_token_ids.push(sym);
                                    o.spoken_positions.push(pos);
                                }
                                Some(_) => {
                                    error = Some((
                                        pos + 1,
                                        format!(
                                            "I-{name} does not match the open phrase label"
                                        ),
                                    ));
                                    break;
                                }
                                None => {
                                    error = Some((
                                        pos + 1,
                                        format!("I-{name} without preceding matching B- label"),
                                    ));
                                    break;
                                }
                            }
                        }
                        pos += 2;
                    }
                    _ => {
                        // Carrier word: closes any open phrase.
                        close(&mut open, &mut phrases, pos);
                        pos += 1;
                    }
                }
            }
        }
    }
    match error {
        None => close(&mut open, &mut phrases, symbols.len()),
        // The open phrase only ever holds validated (token, label) pairs, so
        // it still counts toward the parseable prefix.
        Some((pos, _)) => close(&mut open, &mut phrases, pos),
    }

    let target = if error.is_none() {
        intent.map(|it| ParsedTarget {
            phrases: phrases.clone(),
            intent: it,
            len: symbols.len(),
        })
    } else {
        None
    };
    Ok(LenientParse {
        target,
        prefix_phrases: phrases,
        intent,
        error,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Finetune,
}

/// Targets for one training epoch. Pretrain draws a fresh random phrase order
/// per (seed, epoch, utterance id); Finetune is alphabetic and epoch-independent.
pub fn epoch_targets(
    corpus: &Corpus,
    phase: Phase,
    epoch: usize,
    seed: u64,
) -> Result<Vec<TargetSequence>> {
    corpus
        .utterances
        .iter()
        .map(|utt| match phase {
            Phase::Pretrain => {
                let mut rng = stream(
                    seed,
                    &[TAG_EPOCH_TARGETS, epoch as u64, hash_str(&utt.id)],
                );
                make_target(utt, &corpus.vocab, Variant::RandomOrder, Some(&mut rng))
            }
            Phase::Finetune => make_target(utt, &corpus.vocab, Variant::AlphabeticOrder, None),
        })
        .collect()
}

/// Entity multiset of an utterance as (label name, token ids) pairs in
/// spoken order. Ground truth for evaluation.
pub fn reference_phrases(utt: &Utterance) -> Vec<SluPhrase> {
    phrases_of(utt)
}
