//! Spoken-order recovery for entity phrases.
//!
//! Two methods: (a) the attention heuristic — each phrase's time position is
//! the mean over its spoken tokens of the argmax frame of that token's
//! attention column; (b) keyword spotting — Viterbi forced alignment of each
//! phrase against a garbage/keyword/garbage HMM with Gaussian emissions.
//! Sorting phrases by estimated time reestablishes the spoken order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attn::{AttentionMatrix, AttnModel};
use crate::corpus::{token_embeddings, Corpus, TokenEmbeddings, Utterance};
use crate::error::{Result, SluError};
use crate::nn::Tensor;
use crate::targets::{
    make_target, parse_target, ParsedTarget, TargetSequence, Variant,
};
use crate::vocab::Vocab;

/// Estimated time position of one phrase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhraseTime {
    pub phrase_index: usize,
    /// Mean of the per-token argmax frames.
    pub time: f64,
    pub per_token_argmax: Vec<usize>,
}

/// Estimate each phrase's time position from a forced-attention matrix.
/// Label and intent positions never contribute; argmax ties resolve toward
/// the smallest frame index.
pub fn attention_align(alpha: &AttentionMatrix, parsed: &ParsedTarget) -> Result<Vec<PhraseTime>> {
    if alpha.n_len != parsed.len {
        return Err(SluError::validation(
            "alpha",
            format!(
                "attention has {} columns but parsed sequence has {} symbols",
                alpha.n_len, parsed.len
            ),
        ));
    }
    parsed
        .phrases
        .iter()
        .enumerate()
        .map(|(i, phrase)| {
            if phrase.spoken_positions.is_empty() {
                return Err(SluError::validation(
                    "spoken_positions",
                    format!("phrase {i} has no spoken positions"),
                ));
            }
            let per_token_argmax: Vec<usize> = phrase
                .spoken_positions
                .iter()
                .map(|&n| {
                    let mut best_t = 0usize;
                    let mut best_v = f64::NEG_INFINITY;
                    for t in 0..alpha.t_len {
                        let v = alpha.at(t, n);
                        if v > best_v {
                            best_v = v;
                            best_t = t;
                        }
                    }
                    best_t
                })
                .collect();
            let sum: f64 = per_token_argmax.iter().map(|&t| t as f64).sum();
            Ok(PhraseTime {
                phrase_index: i,
                time: sum / per_token_argmax.len() as f64,
                per_token_argmax,
            })
        })
        .collect()
}

/// Re-emit the parsed phrases sorted by estimated time (ties keep the input
/// order), intent last.
pub fn reorder_by_time(
    parsed: &ParsedTarget,
    times: &[PhraseTime],
    vocab: &Vocab,
) -> Result<TargetSequence> {
    if times.len() != parsed.phrases.len() {
        return Err(SluError::validation(
            "times",
            format!(
                "{} phrase times for {} phrases",
                times.len(),
                parsed.phrases.len()
            ),
        ));
    }
    let mut order: Vec<usize> = (0..parsed.phrases.len()).collect();
    order.sort_by(|&a, &b| {
        times[a]
            .time
            .partial_cmp(&times[b].time)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut symbols = Vec::new();
    for &i in &order {
        let phrase = &parsed.phrases[i].phrase;
        for (k, &tok) in phrase.spoken_token_ids.iter().enumerate() {
            symbols.push(tok);
            let label = if k == 0 {
                vocab.b_label_id(&phrase.label_name)
            } else {
                vocab.i_label_id(&phrase.label_name)
            };
            symbols.push(label.ok_or_else(|| {
                SluError::Internal(format!("label `{}` missing from vocab", phrase.label_name))
            })?);
        }
    }
    symbols.push(parsed.intent);
    Ok(TargetSequence {
        symbols,
        variant: Variant::EstimatedSpokenOrder,
    })
}

/// Per-frame emission scores for the keyword HMM.
pub trait EmissionScorer: Sync {
    /// Log-likelihood of `frame` under keyword state `state` (0-based).
    fn keyword_logp(&self, state: usize, frame: &[f64]) -> f64;
    /// Log-likelihood of `frame` under the garbage state.
    fn garbage_logp(&self, frame: &[f64]) -> f64;
}

/// Isotropic Gaussians: keyword states centered on token embeddings, the
/// garbage state a broad zero-mean Gaussian absorbing everything else.
#[derive(Clone, Debug)]
pub struct GaussianScorer {
    keyword_means: Vec<Vec<f64>>,
    keyword_sigma: f64,
    garbage_sigma: f64,
}

impl GaussianScorer {
    pub fn for_keyword(
        embeddings: &TokenEmbeddings,
        keyword: &[u32],
        keyword_sigma: f64,
        garbage_sigma: f64,
    ) -> Result<Self> {
        if keyword.is_empty() {
            return Err(SluError::validation("keyword", "must be nonempty"));
        }
        if !(keyword_sigma > 0.0) || !(garbage_sigma > 0.0) {
            return Err(SluError::validation("sigma", "must be positive"));
        }
        let keyword_means = keyword
            .iter()
            .map(|&tok| embeddings.require(tok).map(<[f64]>::to_vec))
            .collect::<Result<Vec<_>>>()?;
        Ok(GaussianScorer {
            keyword_means,
            keyword_sigma,
            garbage_sigma,
        })
    }
}

fn gaussian_logp(frame: &[f64], mean: Option<&[f64]>, sigma: f64) -> f64 {
    let d = frame.len() as f64;
    let mut sq = 0.0;
    match mean {
        Some(m) => {
            for (x, mu) in frame.iter().zip(m.iter()) {
                sq += (x - mu) * (x - mu);
            }
        }
        None => {
            for x in frame {
                sq += x * x;
            }
        }
    }
    -0.5 * d * (2.0 * std::f64::consts::PI * sigma * sigma).ln() - sq / (2.0 * sigma * sigma)
}

impl EmissionScorer for GaussianScorer {
    fn keyword_logp(&self, state: usize, frame: &[f64]) -> f64 {
        gaussian_logp(frame, Some(&self.keyword_means[state]), self.keyword_sigma)
    }

    fn garbage_logp(&self, frame: &[f64]) -> f64 {
        gaussian_logp(frame, None, self.garbage_sigma)
    }
}

/// Result of forced alignment against the garbage/keyword/garbage HMM.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HmmAlignment {
    /// Half-open frame interval covered by the keyword states.
    pub keyword_span: (usize, usize),
    /// Per-state frame spans: leading garbage, each keyword state, trailing
    /// garbage. Garbage spans may be empty.
    pub state_spans: Vec<(usize, usize)>,
    pub log_score: f64,
}

impl HmmAlignment {
    pub fn midpoint(&self) -> f64 {
        (self.keyword_span.0 as f64 + self.keyword_span.1 as f64) / 2.0
    }
}

/// Viterbi forced alignment of a keyword against the frames. The HMM is
/// left-to-right with self-loops: optional leading garbage, one state per
/// keyword token (each occupying at least one frame), optional trailing
/// garbage. Ties prefer the predecessor already in the state, which yields
/// the earliest feasible entry times.
pub fn hmm_keyword_align(
    frames: &Tensor,
    keyword: &[u32],
    scorer: &dyn EmissionScorer,
) -> Result<HmmAlignment> {
    let t_len = frames.rows;
    let k = keyword.len();
    if k == 0 {
        return Err(SluError::validation("keyword", "must be nonempty"));
    }
    if t_len < k {
        return Err(SluError::validation(
            "frames",
            format!("infeasible alignment: {t_len} frames for {k} keyword states"),
        ));
    }
    let n_states = k + 2;
    let emit = |state: usize, t: usize| -> f64 {
        let frame = frames.row(t);
        if state == 0 || state == k + 1 {
            scorer.garbage_logp(frame)
        } else {
            scorer.keyword_logp(state - 1, frame)
        }
    };

    let mut score = vec![f64::NEG_INFINITY; t_len * n_states];
    let mut from_prev = vec![false; t_len * n_states];
    let at = |t: usize, s: usize| t * n_states + s;
    score[at(0, 0)] = emit(0, 0);
    score[at(0, 1)] = emit(1, 0);
    for t in 1..t_len {
        for s in 0..n_states {
            let stay = score[at(t - 1, s)];
            let advance = if s > 0 {
                score[at(t - 1, s - 1)]
            } else {
                f64::NEG_INFINITY
            };
            let (best, adv) = if advance > stay {
                (advance, true)
            } else {
                (stay, false)
            };
            if best == f64::NEG_INFINITY {
                continue;
            }
            score[at(t, s)] = best + emit(s, t);
            from_prev[at(t, s)] = adv;
        }
    }

    let (end_state, total) = {
        let sk = score[at(t_len - 1, k)];
        let sg = score[at(t_len - 1, k + 1)];
        if sg > sk {
            (k + 1, sg)
        } else {
            (k, sk)
        }
    };
    if total == f64::NEG_INFINITY {
        return Err(SluError::Numerical(
            "no feasible alignment path".to_string(),
        ));
    }

    let mut states = vec![0usize; t_len];
    let mut s = end_state;
    for t in (0..t_len).rev() {
        states[t] = s;
        if t > 0 && from_prev[at(t, s)] {
            s -= 1;
        }
    }

    let mut state_spans = vec![(0usize, 0usize); n_states];
    let mut cursor = 0;
    for st in 0..n_states {
        let start = cursor;
        while cursor < t_len && states[cursor] == st {
            cursor += 1;
        }
        state_spans[st] = (start, cursor);
    }
    debug_assert_eq!(cursor, t_len);
    let keyword_span = (state_spans[1].0, state_spans[k].1);
    Ok(HmmAlignment {
        keyword_span,
        state_spans,
        log_score: total,
    })
}

/// Rank-mismatch error rates between estimated and true phrase orders.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentErrorReport {
    /// Fraction of entities whose rank differs from the true rank.
    pub entity_error_rate: f64,
    /// Fraction of utterances not perfectly ordered.
    pub utterance_error_rate: f64,
    pub entities: usize,
    pub utterances: usize,
}

pub fn alignment_error(
    estimated: &[Vec<usize>],
    truth: &[Vec<usize>],
) -> Result<AlignmentErrorReport> {
    if estimated.len() != truth.len() {
        return Err(SluError::validation(
            "orders",
            format!(
                "{} estimated utterances vs {} true",
                estimated.len(),
                truth.len()
            ),
        ));
    }
    let mut entity_errors = 0usize;
    let mut entities = 0usize;
    let mut utterance_errors = 0usize;
    for (est, tru) in estimated.iter().zip(truth.iter()) {
        if est.len() != tru.len() {
            return Err(SluError::validation(
                "orders",
                format!("utterance order lengths differ: {} vs {}", est.len(), tru.len()),
            ));
        }
        entities += est.len();
        let mismatches = est.iter().zip(tru.iter()).filter(|(a, b)| a != b).count();
        entity_errors += mismatches;
        if mismatches > 0 {
            utterance_errors += 1;
        }
    }
    Ok(AlignmentErrorReport {
        entity_error_rate: if entities == 0 {
            0.0
        } else {
            entity_errors as f64 / entities as f64
        },
        utterance_error_rate: if estimated.is_empty() {
            0.0
        } else {
            utterance_errors as f64 / estimated.len() as f64
        },
        entities,
        utterances: estimated.len(),
    })
}

/// Configuration of the Gaussian keyword-spotting emissions. The scorer is
/// deliberately not adapted to a corpus's noise level: like a hybrid acoustic
/// model built from clean data, it keeps fixed emission widths.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct HmmAlignParams {
    #[serde(default = "d_keyword_sigma")]
    pub keyword_sigma: f64,
    /// Per-dim std of the zero-mean garbage Gaussian. Unset derives it from
    /// the frame distribution of unit-norm embeddings: sqrt(1/d + kw_sigma^2).
    #[serde(default)]
    pub garbage_sigma: Option<f64>,
}

fn d_keyword_sigma() -> f64 {
    0.35
}

impl HmmAlignParams {
    pub fn garbage_sigma_for(&self, frame_dim: usize) -> f64 {
        self.garbage_sigma
            .unwrap_or_else(|| (1.0 / frame_dim as f64 + self.keyword_sigma.powi(2)).sqrt())
    }
}

impl Default for HmmAlignParams {
    fn default() -> Self {
        HmmAlignParams {
            keyword_sigma: d_keyword_sigma(),
            garbage_sigma: None,
        }
    }
}

/// Corpus-level alignment output: reordered targets plus error bookkeeping
/// against the generator's true spoken order.
#[derive(Clone, Debug)]
pub struct CorpusAlignment {
    pub targets: Vec<TargetSequence>,
    /// Per utterance: true spoken rank of each phrase, in estimated order.
    pub estimated_orders: Vec<Vec<usize>>,
    pub report: AlignmentErrorReport,
}

/// Match parsed phrases (in sequence order) back to the utterance's entities;
/// returns each phrase's spoken rank.
fn spoken_ranks(parsed: &ParsedTarget, utt: &Utterance) -> Result<Vec<usize>> {
    let mut used = vec![false; utt.entities.len()];
    parsed
        .phrases
        .iter()
        .map(|ph| {
            utt.entities
                .iter()
                .enumerate()
                .position(|(ei, ent)| {
                    !used[ei]
                        && ent.label_name == ph.phrase.label_name
                        && utt.transcript[ent.start..ent.end] == ph.phrase.spoken_token_ids[..]
                })
                .map(|ei| {
                    used[ei] = true;
                    ei
                })
                .ok_or_else(|| {
                    SluError::Internal(format!(
                        "phrase `{}` does not match any entity of {}",
                        ph.phrase.label_name, utt.id
                    ))
                })
        })
        .collect()
}

fn finish_alignment(
    utt: &Utterance,
    vocab: &Vocab,
    parsed: &ParsedTarget,
    times: &[PhraseTime],
) -> Result<(TargetSequence, Vec<usize>)> {
    let target = reorder_by_time(parsed, times, vocab)?;
    let ranks = spoken_ranks(parsed, utt)?;
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| {
        times[a]
            .time
            .partial_cmp(&times[b].time)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let estimated: Vec<usize> = order.iter().map(|&i| ranks[i]).collect();
    Ok((target, estimated))
}

fn collect_alignment(
    per_utt: Vec<(TargetSequence, Vec<usize>)>,
) -> Result<CorpusAlignment> {
    let (targets, estimated_orders): (Vec<_>, Vec<_>) = per_utt.into_iter().unzip();
    let truth: Vec<Vec<usize>> = estimated_orders
        .iter()
        .map(|o| (0..o.len()).collect())
        .collect();
    let report = alignment_error(&estimated_orders, &truth)?;
    Ok(CorpusAlignment {
        targets,
        estimated_orders,
        report,
    })
}

/// Recover spoken order for every utterance via forced attention on the
/// alphabetic-order target.
pub fn align_corpus_attention(model: &AttnModel, corpus: &Corpus) -> Result<CorpusAlignment> {
    let per_utt = corpus
        .utterances
        .par_iter()
        .map(|utt| {
            let alphabetic = make_target(utt, &corpus.vocab, Variant::AlphabeticOrder, None)?;
            let parsed = parse_target(&alphabetic.symbols, &corpus.vocab)?;
            let alpha = model.forced_attention(&utt.frames, &alphabetic)?;
            let times = attention_align(&alpha, &parsed)?;
            finish_alignment(utt, &corpus.vocab, &parsed, &times)
        })
        .collect::<Result<Vec<_>>>()?;
    collect_alignment(per_utt)
}

/// Recover spoken order for every utterance by aligning each phrase
/// independently as a keyword and ordering by interval midpoints.
pub fn align_corpus_hmm(corpus: &Corpus, params: &HmmAlignParams) -> Result<CorpusAlignment> {
    let embeddings = token_embeddings(&corpus.spec, &corpus.vocab);
    let garbage_sigma = params.garbage_sigma_for(corpus.spec.frame_dim);
    let per_utt = corpus
        .utterances
        .par_iter()
        .map(|utt| {
            let alphabetic = make_target(utt, &corpus.vocab, Variant::AlphabeticOrder, None)?;
            let parsed = parse_target(&alphabetic.symbols, &corpus.vocab)?;
            let times = parsed
                .phrases
                .iter()
                .enumerate()
                .map(|(i, ph)| {
                    let scorer = GaussianScorer::for_keyword(
                        &embeddings,
                        &ph.phrase.spoken_token_ids,
                        params.keyword_sigma,
                        garbage_sigma,
                    )?;
                    let alignment =
                        hmm_keyword_align(&utt.frames, &ph.phrase.spoken_token_ids, &scorer)?;
                    Ok(PhraseTime {
                        phrase_index: i,
                        time: alignment.midpoint(),
                        per_token_argmax: Vec::new(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            finish_alignment(utt, &corpus.vocab, &parsed, &times)
        })
        .collect::<Result<Vec<_>>>()?;
    collect_alignment(per_utt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, render_frames, CorpusSpec};
    use crate::rng::stream;
    use crate::targets::tests::example_fixture;

    fn delta_matrix(t_len: usize, n_len: usize, peaks: &[(usize, usize)]) -> AttentionMatrix {
        let mut data = vec![0.0; t_len * n_len];
        // Default every column to a peak at t=0 so columns stay normalized.
        for n in 0..n_len {
            data[n] = 1.0;
        }
        for &(t, n) in peaks {
            data[n] = 0.0;
            data[t * n_len + n] = 1.0;
        }
        AttentionMatrix { t_len, n_len, data }
    }

    fn paper_alphabetic() -> (crate::vocab::Vocab, ParsedTarget, TargetSequence) {
        let (vocab, utt) = example_fixture();
        let alpha = make_target(&utt, &vocab, Variant::AlphabeticOrder, None).unwrap();
        let parsed = parse_target(&alpha.symbols, &vocab).unwrap();
        (vocab, parsed, alpha)
    }

    #[test]
    fn mean_of_delta_peaks() {
        // Sequence: w B-l w B-l w I-l INTENT (7 symbols) with phrase 2 having
        // spoken positions {2, 4}... build from the worked example instead.
        let (_, parsed, alpha_target) = paper_alphabetic();
        // Columns: reno@0, las@2, vegas@4, dallas@6 (positions 0,2,4,6).
        let t_len = 16;
        let m = delta_matrix(
            t_len,
            alpha_target.symbols.len(),
            &[(3, 0), (10, 2), (12, 4), (5, 6)],
        );
        let times = attention_align(&m, &parsed).unwrap();
        assert_eq!(times.len(), 3);
        assert_eq!(times[0].time, 3.0); // reno
        assert_eq!(times[1].time, 11.0); // las vegas: mean of {10, 12}
        assert_eq!(times[2].time, 5.0); // dallas
        assert_eq!(times[1].per_token_argmax, vec![10, 12]);
    }

    #[test]
    fn uniform_column_ties_to_frame_zero() {
        let (_, parsed, alpha_target) = paper_alphabetic();
        let n_len = alpha_target.symbols.len();
        let t_len = 4;
        let data = vec![1.0 / t_len as f64; t_len * n_len];
        let m = AttentionMatrix { t_len, n_len, data };
        let times = attention_align(&m, &parsed).unwrap();
        for t in &times {
            assert_eq!(t.time, 0.0);
        }
    }

    #[test]
    fn column_count_mismatch_rejected() {
        let (_, parsed, _) = paper_alphabetic();
        let m = delta_matrix(4, 2, &[]);
        assert!(attention_align(&m, &parsed).is_err());
    }

    #[test]
    fn reorder_identity_when_times_ascend() {
        let (vocab, parsed, alpha_target) = paper_alphabetic();
        let times: Vec<PhraseTime> = (0..3)
            .map(|i| PhraseTime {
                phrase_index: i,
                time: i as f64,
                per_token_argmax: vec![i],
            })
            .collect();
        let out = reorder_by_time(&parsed, &times, &vocab).unwrap();
        assert_eq!(out.symbols, alpha_target.symbols);
        assert_eq!(out.variant, Variant::EstimatedSpokenOrder);
    }

    #[test]
    fn reorder_recovers_paper_spoken_order() {
        let (vocab, parsed, _) = paper_alphabetic();
        let (_, utt) = example_fixture();
        // Alphabetic input is [reno, las vegas, dallas]; the transcript speaks
        // dallas first, then reno, then las vegas.
        let times = vec![
            PhraseTime {
                phrase_index: 0,
                time: 14.0,
                per_token_argmax: vec![14],
            },
            PhraseTime {
                phrase_index: 1,
                time: 27.0,
                per_token_argmax: vec![26, 28],
            },
            PhraseTime {
                phrase_index: 2,
                time: 10.5,
                per_token_argmax: vec![10, 11],
            },
        ];
        let out = reorder_by_time(&parsed, &times, &vocab).unwrap();
        let spoken = make_target(&utt, &vocab, Variant::SpokenOrder, None).unwrap();
        assert_eq!(out.symbols, spoken.symbols);
    }

    #[test]
    fn reorder_equal_times_keeps_alphabetic_order() {
        let (vocab, parsed, alpha_target) = paper_alphabetic();
        let times: Vec<PhraseTime> = (0..3)
            .map(|i| PhraseTime {
                phrase_index: i,
                time: 7.0,
                per_token_argmax: vec![7],
            })
            .collect();
        let out = reorder_by_time(&parsed, &times, &vocab).unwrap();
        assert_eq!(out.symbols, alpha_target.symbols);
    }

    #[test]
    fn reorder_output_parses_to_same_phrase_multiset() {
        let (vocab, parsed, _) = paper_alphabetic();
        let mut rng = stream(3, &[55]);
        use rand::Rng;
        for _ in 0..50 {
            let times: Vec<PhraseTime> = (0..3)
                .map(|i| PhraseTime {
                    phrase_index: i,
                    time: rng.random_range(0.0..30.0),
                    per_token_argmax: vec![],
                })
                .collect();
            let out = reorder_by_time(&parsed, &times, &vocab).unwrap();
            let reparsed = parse_target(&out.symbols, &vocab).unwrap();
            let mut a: Vec<_> = reparsed
                .phrases
                .iter()
                .map(|p| (p.phrase.label_name.clone(), p.phrase.spoken_token_ids.clone()))
                .collect();
            let mut b: Vec<_> = parsed
                .phrases
                .iter()
                .map(|p| (p.phrase.label_name.clone(), p.phrase.spoken_token_ids.clone()))
                .collect();
            a.sort();
            b.sort();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn hmm_exact_on_zero_noise_keyword_in_carrier_context() {
        let spec = CorpusSpec {
            noise_sigma: 0.0,
            frames_per_token_range: (2, 3),
            ..CorpusSpec::with_defaults(0, 17)
        };
        let corpus = generate_corpus(&spec).unwrap();
        let vocab = &corpus.vocab;
        let emb = token_embeddings(&spec, vocab);
        // carrier carrier keyword keyword carrier
        let c1 = vocab.id("i").unwrap();
        let c2 = vocab.id("want").unwrap();
        let k1 = vocab.id("las").unwrap();
        let k2 = vocab.id("vegas").unwrap();
        let c3 = vocab.id("flight").unwrap();
        let tokens = [c1, c2, k1, k2, c3];
        let mut rng = stream(2, &[3]);
        let (frames, spans) = render_frames(&tokens, &spec, &emb, &mut rng).unwrap();
        let scorer = GaussianScorer::for_keyword(&emb, &[k1, k2], 0.08, 0.26).unwrap();
        let alignment = hmm_keyword_align(&frames, &[k1, k2], &scorer).unwrap();
        assert_eq!(alignment.keyword_span, (spans[2].0, spans[3].1));
        // Per-state spans tile the keyword interval.
        assert_eq!(alignment.state_spans[1], spans[2]);
        assert_eq!(alignment.state_spans[2], spans[3]);
    }

    #[test]
    fn hmm_keyword_covering_all_frames() {
        let spec = CorpusSpec {
            noise_sigma: 0.0,
            frames_per_token_range: (1, 1),
            ..CorpusSpec::with_defaults(0, 18)
        };
        let corpus = generate_corpus(&spec).unwrap();
        let emb = token_embeddings(&spec, &corpus.vocab);
        let k1 = corpus.vocab.id("dallas").unwrap();
        let k2 = corpus.vocab.id("reno").unwrap();
        let mut rng = stream(2, &[4]);
        let (frames, _) = render_frames(&[k1, k2], &spec, &emb, &mut rng).unwrap();
        let scorer = GaussianScorer::for_keyword(&emb, &[k1, k2], 0.08, 0.26).unwrap();
        let alignment = hmm_keyword_align(&frames, &[k1, k2], &scorer).unwrap();
        assert_eq!(alignment.keyword_span, (0, frames.rows));
    }

    #[test]
    fn hmm_infeasible_when_fewer_frames_than_states() {
        let spec = CorpusSpec {
            noise_sigma: 0.0,
            frames_per_token_range: (1, 1),
            ..CorpusSpec::with_defaults(0, 19)
        };
        let corpus = generate_corpus(&spec).unwrap();
        let emb = token_embeddings(&spec, &corpus.vocab);
        let k1 = corpus.vocab.id("dallas").unwrap();
        let k2 = corpus.vocab.id("reno").unwrap();
        let mut rng = stream(2, &[5]);
        let (frames, _) = render_frames(&[k1], &spec, &emb, &mut rng).unwrap();
        let scorer = GaussianScorer::for_keyword(&emb, &[k1, k2], 0.08, 0.26).unwrap();
        assert!(hmm_keyword_align(&frames, &[k1, k2], &scorer).is_err());
    }

    #[test]
    fn alignment_error_rates() {
        let identity = vec![vec![0, 1, 2]];
        let report = alignment_error(&identity, &identity).unwrap();
        assert_eq!(report.entity_error_rate, 0.0);
        assert_eq!(report.utterance_error_rate, 0.0);

        let reversed = vec![vec![2, 1, 0]];
        let truth = vec![vec![0, 1, 2]];
        let report = alignment_error(&reversed, &truth).unwrap();
        assert!((report.entity_error_rate - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(report.utterance_error_rate, 1.0);

        let singles = vec![vec![0], vec![0], vec![0]];
        let report = alignment_error(&singles, &singles).unwrap();
        assert_eq!(report.entity_error_rate, 0.0);

        assert!(alignment_error(&identity, &singles).is_err());
    }
}
