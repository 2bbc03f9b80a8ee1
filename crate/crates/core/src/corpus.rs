//! Synthetic corpus generation.
//!
//! Real audio is replaced by per-token embedding frames plus Gaussian noise:
//! each spoken token is rendered as a run of consecutive frames around a
//! unit-norm embedding that is a fixed function of (token id, corpus seed).
//! Token duration jitter stands in for speed/tempo perturbation and the noise
//! sigma stands in for the street-noise SNR. Generation is a pure function of
//! the spec: utterance i draws from a stream keyed by (seed, i), so parallel
//! and serial generation agree byte for byte.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SluError};
use crate::grammar::{self, SlotPools, Tok};
use crate::nn::Tensor;
use crate::rng::stream;
use crate::vocab::Vocab;

const TAG_UTTERANCE: u64 = 1;
const TAG_EMBEDDING: u64 = 2;
const TAG_NOISE: u64 = 3;

/// Noise sigma of the default clean corpus.
pub const CLEAN_SIGMA: f64 = 0.05;
/// Extra sigma added on top of clean for the default noisy corpus.
pub const NOISY_EXTRA_SIGMA: f64 = 0.5;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub n_utterances: usize,
    #[serde(default = "default_n_cities")]
    pub n_cities: usize,
    #[serde(default = "default_n_times")]
    pub n_times: usize,
    #[serde(default = "default_n_airlines")]
    pub n_airlines: usize,
    #[serde(default = "default_intents")]
    pub intents: Vec<String>,
    #[serde(default = "default_frame_dim")]
    pub frame_dim: usize,
    /// Inclusive [lo, hi] frames per token.
    #[serde(default = "default_frames_per_token")]
    pub frames_per_token_range: (usize, usize),
    #[serde(default = "default_noise_sigma")]
    pub noise_sigma: f64,
    pub seed: u64,
}

fn default_n_cities() -> usize {
    14
}
fn default_n_times() -> usize {
    8
}
fn default_n_airlines() -> usize {
    6
}
fn default_intents() -> Vec<String> {
    vec![
        "flight".to_string(),
        "airfare".to_string(),
        "ground_service".to_string(),
    ]
}
fn default_frame_dim() -> usize {
    16
}
fn default_frames_per_token() -> (usize, usize) {
    (2, 4)
}
fn default_noise_sigma() -> f64 {
    CLEAN_SIGMA
}

impl CorpusSpec {
    pub fn with_defaults(n_utterances: usize, seed: u64) -> Self {
        CorpusSpec {
            n_utterances,
            n_cities: default_n_cities(),
            n_times: default_n_times(),
            n_airlines: default_n_airlines(),
            intents: default_intents(),
            frame_dim: default_frame_dim(),
            frames_per_token_range: default_frames_per_token(),
            noise_sigma: default_noise_sigma(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_cities < 2 {
            return Err(SluError::validation("n_cities", "must be at least 2"));
        }
        if self.n_times < 1 {
            return Err(SluError::validation("n_times", "must be at least 1"));
        }
        if self.n_airlines < 1 {
            return Err(SluError::validation("n_airlines", "must be at least 1"));
        }
        grammar::validate_intents(&self.intents)?;
        if self.frame_dim < 1 {
            return Err(SluError::validation("frame_dim", "must be at least 1"));
        }
        let (lo, hi) = self.frames_per_token_range;
        if lo < 1 {
            return Err(SluError::validation(
                "frames_per_token_range",
                "lower bound must be at least 1",
            ));
        }
        if hi < lo {
            return Err(SluError::validation(
                "frames_per_token_range",
                "upper bound must be >= lower bound",
            ));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(SluError::validation(
                "noise_sigma",
                "must be non-negative and finite",
            ));
        }
        Ok(())
    }
}

/// One entity occurrence: label name plus half-open token span into the
/// transcript.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityAnnotation {
    pub label_name: String,
    pub start: usize,
    pub end: usize,
}

impl EntityAnnotation {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    /// T x frame_dim feature matrix.
    pub frames: Tensor,
    /// Spoken-token ids.
    pub transcript: Vec<u32>,
    /// Entities in spoken order (strictly increasing spans).
    pub entities: Vec<EntityAnnotation>,
    /// Intent token id.
    pub intent: u32,
    /// Per transcript token, the half-open frame interval it renders into.
    pub token_frame_spans: Vec<(usize, usize)>,
}

impl Utterance {
    pub fn n_frames(&self) -> usize {
        self.frames.rows
    }

    pub fn validate(&self, vocab: &Vocab) -> Result<()> {
        let total: usize = self.token_frame_spans.iter().map(|(s, e)| e - s).sum();
        if total != self.frames.rows {
            return Err(SluError::validation(
                "frames",
                format!(
                    "utterance {}: frame count {} != span total {}",
                    self.id, self.frames.rows, total
                ),
            ));
        }
        if self.token_frame_spans.len() != self.transcript.len() {
            return Err(SluError::validation(
                "token_frame_spans",
                "one span per transcript token required",
            ));
        }
        let mut cursor = 0;
        for (s, e) in &self.token_frame_spans {
            if *s != cursor || *e <= *s {
                return Err(SluError::validation(
                    "token_frame_spans",
                    format!("utterance {}: spans must tile [0, T)", self.id),
                ));
            }
            cursor = *e;
        }
        let mut prev_end = 0;
        for ent in &self.entities {
            if ent.is_empty() || ent.end > self.transcript.len() {
                return Err(SluError::validation(
                    "entities",
                    format!("utterance {}: bad span {}..{}", self.id, ent.start, ent.end),
                ));
            }
            if ent.start < prev_end {
                return Err(SluError::validation(
                    "entities",
                    format!("utterance {}: overlapping or unordered entities", self.id),
                ));
            }
            prev_end = ent.end;
        }
        if vocab.intent_name(self.intent).is_none() {
            return Err(SluError::validation(
                "intent",
                format!("utterance {}: id {} is not an intent", self.id, self.intent),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Corpus {
    pub vocab: Vocab,
    pub spec: CorpusSpec,
    pub utterances: Vec<Utterance>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }
}

/// Unit-norm spoken-token embeddings, a fixed function of (corpus seed,
/// token id, frame_dim).
#[derive(Clone, Debug)]
pub struct TokenEmbeddings {
    pub dim: usize,
    table: Vec<Option<Vec<f64>>>,
}

impl TokenEmbeddings {
    pub fn get(&self, token: u32) -> Option<&[f64]> {
        self.table
            .get(token as usize)
            .and_then(|e| e.as_deref())
    }

    pub fn require(&self, token: u32) -> Result<&[f64]> {
        self.get(token).ok_or_else(|| {
            SluError::validation("tokens", format!("id {token} has no spoken embedding"))
        })
    }

    /// Nearest embedding by Euclidean distance; ties to the smallest id.
    pub fn nearest(&self, frame: &[f64]) -> Option<u32> {
        let mut best: Option<(u32, f64)> = None;
        for (id, emb) in self.table.iter().enumerate() {
            if let Some(emb) = emb {
                let d: f64 = emb
                    .iter()
                    .zip(frame.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if best.map_or(true, |(_, bd)| d < bd) {
                    best = Some((id as u32, d));
                }
            }
        }
        best.map(|(id, _)| id)
    }
}

/// Build the embedding table for every spoken token of the vocab.
pub fn token_embeddings(spec: &CorpusSpec, vocab: &Vocab) -> TokenEmbeddings {
    let mut table = vec![None; vocab.size()];
    for id in vocab.spoken_ids() {
        let mut rng = stream(spec.seed, &[TAG_EMBEDDING, u64::from(id)]);
        let mut v: Vec<f64> = (0..spec.frame_dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        v.iter_mut().for_each(|x| *x /= norm);
        table[id as usize] = Some(v);
    }
    TokenEmbeddings {
        dim: spec.frame_dim,
        table,
    }
}

/// Build the vocab implied by a spec: carriers + slot fillers, B-/I- labels
/// for the full schema, INTENT-* for the spec's intents.
pub fn vocab_for_spec(spec: &CorpusSpec) -> Result<Vocab> {
    let pools = SlotPools::build(spec.n_cities, spec.n_times, spec.n_airlines);
    let mut spoken = grammar::carrier_words();
    let push_unique = |w: &str, spoken: &mut Vec<String>| {
        if !spoken.iter().any(|s| s == w) {
            spoken.push(w.to_string());
        }
    };
    for filler in pools
        .cities
        .iter()
        .chain(pools.times.iter())
        .chain(pools.airlines.iter())
    {
        for w in filler {
            push_unique(w, &mut spoken);
        }
    }
    let mut labels = Vec::new();
    for name in grammar::LABEL_NAMES {
        labels.push(format!("B-{name}"));
        labels.push(format!("I-{name}"));
    }
    let intents = spec.intents.iter().map(|i| format!("INTENT-{i}")).collect();
    Vocab::new(spoken, labels, intents)
}

/// Render a token sequence to frames with per-token duration jitter; returns
/// the frame matrix plus each token's frame span.
pub fn render_frames(
    tokens: &[u32],
    spec: &CorpusSpec,
    embeddings: &TokenEmbeddings,
    rng: &mut ChaCha12Rng,
) -> Result<(Tensor, Vec<(usize, usize)>)> {
    let (lo, hi) = spec.frames_per_token_range;
    let mut rows: Vec<f64> = Vec::new();
    let mut spans = Vec::with_capacity(tokens.len());
    let mut cursor = 0;
    for &tok in tokens {
        let emb = embeddings.require(tok)?;
        let r = rng.random_range(lo..=hi);
        for _ in 0..r {
            for &e in emb {
                let noise: f64 = StandardNormal.sample(rng);
                rows.push(e + spec.noise_sigma * noise);
            }
        }
        spans.push((cursor, cursor + r));
        cursor += r;
    }
    Ok((
        Tensor::from_vec(cursor, spec.frame_dim, rows),
        spans,
    ))
}

fn generate_utterance(
    spec: &CorpusSpec,
    vocab: &Vocab,
    pools: &SlotPools,
    embeddings: &TokenEmbeddings,
    index: usize,
) -> Result<Utterance> {
    let mut rng = stream(spec.seed, &[TAG_UTTERANCE, index as u64]);

    // Four in ten utterances are forced onto templates with >= 3 entities so
    // reordering stays non-trivial.
    let want_rich = index % 10 < 4;
    let intent_choices: Vec<&String> = if want_rich {
        let rich: Vec<&String> = spec
            .intents
            .iter()
            .filter(|i| !grammar::templates_for(i, 3).is_empty())
            .collect();
        if rich.is_empty() {
            spec.intents.iter().collect()
        } else {
            rich
        }
    } else {
        spec.intents.iter().collect()
    };
    let intent = intent_choices[rng.random_range(0..intent_choices.len())].clone();
    let min_entities = if want_rich { 3 } else { 1 };
    let mut templates = grammar::templates_for(&intent, min_entities);
    if templates.is_empty() {
        templates = grammar::templates_for(&intent, 1);
    }
    let template = templates[rng.random_range(0..templates.len())];

    let mut transcript: Vec<u32> = Vec::new();
    let mut entities: Vec<EntityAnnotation> = Vec::new();
    let mut used_cities: Vec<usize> = Vec::new();
    for tok in template.toks {
        match tok {
            Tok::W(w) => transcript.push(vocab.require_id(w)?),
            Tok::S(kind) => {
                let pool = pools.for_slot(*kind);
                let is_city = matches!(
                    kind,
                    grammar::SlotKind::FromLoc
                        | grammar::SlotKind::ToLoc
                        | grammar::SlotKind::StopLoc
                );
                let choice = loop {
                    let c = rng.random_range(0..pool.len());
                    if !is_city || !used_cities.contains(&c) || used_cities.len() >= pool.len() {
                        break c;
                    }
                };
                if is_city {
                    used_cities.push(choice);
                }
                let start = transcript.len();
                for w in &pool[choice] {
                    transcript.push(vocab.require_id(w)?);
                }
                entities.push(EntityAnnotation {
                    label_name: kind.label_name().to_string(),
                    start,
                    end: transcript.len(),
                });
            }
        }
    }

    let (frames, token_frame_spans) = render_frames(&transcript, spec, embeddings, &mut rng)?;
    let utt = Utterance {
        id: format!("utt-{index:05}"),
        frames,
        transcript,
        entities,
        intent: vocab
            .intent_id(&intent)
            .ok_or_else(|| SluError::Internal(format!("intent {intent} missing from vocab")))?,
        token_frame_spans,
    };
    utt.validate(vocab)?;
    Ok(utt)
}

/// Generate a corpus. Deterministic: the same spec yields a byte-identical
/// corpus regardless of thread count.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    let vocab = vocab_for_spec(spec)?;
    let pools = SlotPools::build(spec.n_cities, spec.n_times, spec.n_airlines);
    let embeddings = token_embeddings(spec, &vocab);
    let utterances: Vec<Utterance> = (0..spec.n_utterances)
        .into_par_iter()
        .map(|i| generate_utterance(spec, &vocab, &pools, &embeddings, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus {
        vocab,
        spec: spec.clone(),
        utterances,
    })
}

/// Add independent Gaussian noise of std `extra_sigma` to every frame.
/// Transcripts, entities and spans are untouched.
pub fn make_noisy(corpus: &Corpus, extra_sigma: f64, seed: u64) -> Result<Corpus> {
    if !(extra_sigma >= 0.0) {
        return Err(SluError::validation(
            "extra_sigma",
            "must be non-negative and finite",
        ));
    }
    let mut out = corpus.clone();
    out.spec.noise_sigma = (corpus.spec.noise_sigma.powi(2) + extra_sigma.powi(2)).sqrt();
    if extra_sigma == 0.0 {
        return Ok(out);
    }
    out.utterances
        .par_iter_mut()
        .enumerate()
        .for_each(|(i, utt)| {
            let mut rng = stream(seed, &[TAG_NOISE, i as u64]);
            for x in utt.frames.data.iter_mut() {
                let n: f64 = StandardNormal.sample(&mut rng);
                *x += extra_sigma * n;
            }
        });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> CorpusSpec {
        CorpusSpec::with_defaults(40, 7)
    }

    #[test]
    fn empty_corpus_has_populated_vocab() {
        let corpus = generate_corpus(&CorpusSpec::with_defaults(0, 3)).unwrap();
        assert!(corpus.utterances.is_empty());
        assert!(corpus.vocab.size() > 20);
        assert_eq!(corpus.vocab.intent_tokens().len(), 3);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_corpus(&small_spec()).unwrap();
        let b = generate_corpus(&small_spec()).unwrap();
        assert_eq!(a.utterances.len(), b.utterances.len());
        for (x, y) in a.utterances.iter().zip(b.utterances.iter()) {
            assert_eq!(x.transcript, y.transcript);
            assert_eq!(x.frames.data, y.frames.data);
            assert_eq!(x.entities, y.entities);
        }
    }

    #[test]
    fn rich_utterance_quota_holds() {
        let spec = CorpusSpec {
            n_utterances: 500,
            seed: 1,
            ..CorpusSpec::with_defaults(0, 0)
        };
        let corpus = generate_corpus(&spec).unwrap();
        let rich = corpus
            .utterances
            .iter()
            .filter(|u| u.entities.len() >= 3)
            .count();
        assert!(rich >= 150, "only {rich} utterances with >= 3 entities");
        assert!(corpus.utterances.iter().all(|u| !u.entities.is_empty()));
    }

    #[test]
    fn schema_labels_all_appear() {
        let corpus = generate_corpus(&CorpusSpec::with_defaults(300, 5)).unwrap();
        for name in grammar::LABEL_NAMES {
            assert!(
                corpus
                    .utterances
                    .iter()
                    .flat_map(|u| u.entities.iter())
                    .any(|e| e.label_name == name),
                "label {name} never generated"
            );
        }
    }

    #[test]
    fn render_zero_noise_repeats_embedding() {
        let mut spec = small_spec();
        spec.noise_sigma = 0.0;
        spec.frames_per_token_range = (3, 3);
        let vocab = vocab_for_spec(&spec).unwrap();
        let emb = token_embeddings(&spec, &vocab);
        let a = vocab.id("dallas").unwrap();
        let b = vocab.id("reno").unwrap();
        let mut rng = stream(0, &[9]);
        let (frames, spans) = render_frames(&[a, b], &spec, &emb, &mut rng).unwrap();
        assert_eq!(frames.rows, 6);
        assert_eq!(spans, vec![(0, 3), (3, 6)]);
        for t in 0..3 {
            assert_eq!(frames.row(t), emb.get(a).unwrap());
        }
    }

    #[test]
    fn render_empty_tokens() {
        let spec = small_spec();
        let vocab = vocab_for_spec(&spec).unwrap();
        let emb = token_embeddings(&spec, &vocab);
        let mut rng = stream(0, &[9]);
        let (frames, spans) = render_frames(&[], &spec, &emb, &mut rng).unwrap();
        assert_eq!(frames.rows, 0);
        assert!(spans.is_empty());
    }

    #[test]
    fn render_rejects_non_spoken_ids() {
        let spec = small_spec();
        let vocab = vocab_for_spec(&spec).unwrap();
        let emb = token_embeddings(&spec, &vocab);
        let mut rng = stream(0, &[9]);
        let label = vocab.b_label_id("toloc.city_name").unwrap();
        assert!(render_frames(&[label], &spec, &emb, &mut rng).is_err());
    }

    #[test]
    fn render_is_deterministic_under_stream() {
        let mut spec = small_spec();
        spec.noise_sigma = 0.1;
        let vocab = vocab_for_spec(&spec).unwrap();
        let emb = token_embeddings(&spec, &vocab);
        let a = vocab.id("dallas").unwrap();
        let f1 = render_frames(&[a, a], &spec, &emb, &mut stream(4, &[2])).unwrap();
        let f2 = render_frames(&[a, a], &spec, &emb, &mut stream(4, &[2])).unwrap();
        assert_eq!(f1.0.data, f2.0.data);
        assert_eq!(f1.1, f2.1);
    }

    #[test]
    fn make_noisy_zero_sigma_is_identity() {
        let corpus = generate_corpus(&small_spec()).unwrap();
        let noisy = make_noisy(&corpus, 0.0, 11).unwrap();
        for (a, b) in corpus.utterances.iter().zip(noisy.utterances.iter()) {
            assert_eq!(a.frames.data, b.frames.data);
        }
    }

    #[test]
    fn make_noisy_deterministic_and_unbiased() {
        let spec = CorpusSpec {
            n_utterances: 500,
            seed: 2,
            ..CorpusSpec::with_defaults(0, 0)
        };
        let corpus = generate_corpus(&spec).unwrap();
        let n1 = make_noisy(&corpus, 0.5, 11).unwrap();
        let n2 = make_noisy(&corpus, 0.5, 11).unwrap();
        for (a, b) in n1.utterances.iter().zip(n2.utterances.iter()) {
            assert_eq!(a.frames.data, b.frames.data);
        }
        // Per-frame mean squared difference ~= sigma^2 * d.
        let mut total = 0.0;
        let mut frames = 0usize;
        for (a, b) in corpus.utterances.iter().zip(n1.utterances.iter()) {
            for (x, y) in a.frames.data.iter().zip(b.frames.data.iter()) {
                total += (x - y) * (x - y);
            }
            frames += a.frames.rows;
        }
        let per_frame = total / frames as f64;
        let expected = 0.25 * spec.frame_dim as f64;
        assert!(
            (per_frame - expected).abs() / expected < 0.10,
            "per-frame msd {per_frame} vs expected {expected}"
        );
    }

    #[test]
    fn zero_noise_frames_classify_perfectly() {
        let mut spec = small_spec();
        spec.noise_sigma = 0.0;
        let corpus = generate_corpus(&spec).unwrap();
        let emb = token_embeddings(&spec, &corpus.vocab);
        for utt in &corpus.utterances {
            for (tok, (s, e)) in utt.transcript.iter().zip(utt.token_frame_spans.iter()) {
                for t in *s..*e {
                    assert_eq!(emb.nearest(utt.frames.row(t)), Some(*tok));
                }
            }
        }
    }

    #[test]
    fn invalid_specs_name_the_field() {
        let mut s = small_spec();
        s.frames_per_token_range = (0, 2);
        let e = generate_corpus(&s).unwrap_err().to_string();
        assert!(e.contains("frames_per_token_range"), "{e}");
        let mut s = small_spec();
        s.noise_sigma = -1.0;
        assert!(generate_corpus(&s)
            .unwrap_err()
            .to_string()
            .contains("noise_sigma"));
        let mut s = small_spec();
        s.intents = vec!["warp_drive".into()];
        assert!(generate_corpus(&s)
            .unwrap_err()
            .to_string()
            .contains("intents"));
    }
}
