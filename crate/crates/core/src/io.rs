//! On-disk formats: corpus JSON Lines with a vocab sidecar, target and
//! prediction JSONL, and generic JSON helpers. Token ids are externalized as
//! strings so files remain readable and vocab-stable.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, CorpusSpec, EntityAnnotation, Utterance};
use crate::error::{Result, SluError};
use crate::nn::Tensor;
use crate::targets::{TargetSequence, Variant};
use crate::vocab::{Vocab, BLANK_TOKEN, SOS_TOKEN};

#[derive(Serialize, Deserialize)]
struct UtteranceLine {
    id: String,
    frames: Vec<Vec<f64>>,
    transcript: Vec<String>,
    entities: Vec<EntityLine>,
    intent: String,
    token_frame_spans: Vec<(usize, usize)>,
}

#[derive(Serialize, Deserialize)]
struct EntityLine {
    label: String,
    start: usize,
    end: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabSidecar {
    spec: CorpusSpec,
    blank: String,
    start: String,
    spoken_tokens: Vec<String>,
    label_tokens: Vec<String>,
    intent_tokens: Vec<String>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = serde_json::to_string_pretty(value)?;
    out.push('\n');
    fs::write(path, out).map_err(|e| SluError::io(path.display().to_string(), e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let data =
        fs::read_to_string(path).map_err(|e| SluError::io(path.display().to_string(), e))?;
    Ok(serde_json::from_str(&data)?)
}

/// Write the corpus as JSONL plus a `vocab.json` sidecar next to it.
pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    let file =
        fs::File::create(path).map_err(|e| SluError::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    for utt in &corpus.utterances {
        let line = UtteranceLine {
            id: utt.id.clone(),
            frames: (0..utt.frames.rows)
                .map(|t| utt.frames.row(t).to_vec())
                .collect(),
            transcript: corpus.vocab.render(&utt.transcript),
            entities: utt
                .entities
                .iter()
                .map(|e| EntityLine {
                    label: e.label_name.clone(),
                    start: e.start,
                    end: e.end,
                })
                .collect(),
            intent: corpus
                .vocab
                .intent_name(utt.intent)
                .unwrap_or_default()
                .to_string(),
            token_frame_spans: utt.token_frame_spans.clone(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")
            .map_err(|e| SluError::io(path.display().to_string(), e))?;
    }
    w.flush()
        .map_err(|e| SluError::io(path.display().to_string(), e))?;
    save_vocab_sidecar(corpus, &vocab_sidecar_path(path))
}

pub fn vocab_sidecar_path(corpus_path: &Path) -> std::path::PathBuf {
    corpus_path.with_file_name("vocab.json")
}

pub fn save_vocab_sidecar(corpus: &Corpus, path: &Path) -> Result<()> {
    let sidecar = VocabSidecar {
        spec: corpus.spec.clone(),
        blank: BLANK_TOKEN.to_string(),
        start: SOS_TOKEN.to_string(),
        spoken_tokens: corpus.vocab.spoken_tokens().to_vec(),
        label_tokens: corpus.vocab.label_tokens().to_vec(),
        intent_tokens: corpus.vocab.intent_tokens().to_vec(),
    };
    write_json(path, &sidecar)
}

/// Load a corpus from JSONL plus its vocab sidecar.
pub fn load_corpus(corpus_path: &Path, vocab_path: &Path) -> Result<Corpus> {
    let sidecar: VocabSidecar = read_json(vocab_path)?;
    let vocab = Vocab::new(
        sidecar.spoken_tokens,
        sidecar.label_tokens,
        sidecar.intent_tokens,
    )?;
    let file = fs::File::open(corpus_path)
        .map_err(|e| SluError::io(corpus_path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut utterances = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| SluError::io(corpus_path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: UtteranceLine = serde_json::from_str(&line).map_err(|e| {
            SluError::Internal(format!(
                "{}:{}: malformed utterance line: {e}",
                corpus_path.display(),
                lineno + 1
            ))
        })?;
        let frame_rows = parsed.frames.len();
        let dim = sidecar.spec.frame_dim;
        let mut data = Vec::with_capacity(frame_rows * dim);
        for row in &parsed.frames {
            if row.len() != dim {
                return Err(SluError::validation(
                    "frames",
                    format!("{}: frame width {} != {}", parsed.id, row.len(), dim),
                ));
            }
            data.extend_from_slice(row);
        }
        let utt = Utterance {
            id: parsed.id,
            frames: Tensor::from_vec(frame_rows, dim, data),
            transcript: vocab.ids_for(&parsed.transcript)?,
            entities: parsed
                .entities
                .iter()
                .map(|e| EntityAnnotation {
                    label_name: e.label.clone(),
                    start: e.start,
                    end: e.end,
                })
                .collect(),
            intent: vocab.require_id(&format!("INTENT-{}", parsed.intent))?,
            token_frame_spans: parsed.token_frame_spans,
        };
        utt.validate(&vocab)?;
        utterances.push(utt);
    }
    Ok(Corpus {
        vocab,
        spec: sidecar.spec,
        utterances,
    })
}

#[derive(Serialize, Deserialize)]
struct TargetLine {
    id: String,
    variant: Variant,
    symbols: Vec<String>,
}

pub fn save_targets(
    items: &[(String, TargetSequence)],
    vocab: &Vocab,
    path: &Path,
) -> Result<()> {
    let file =
        fs::File::create(path).map_err(|e| SluError::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    for (id, target) in items {
        let line = TargetLine {
            id: id.clone(),
            variant: target.variant,
            symbols: vocab.render(&target.symbols),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")
            .map_err(|e| SluError::io(path.display().to_string(), e))?;
    }
    w.flush()
        .map_err(|e| SluError::io(path.display().to_string(), e))
}

pub fn load_targets(path: &Path, vocab: &Vocab) -> Result<Vec<(String, TargetSequence)>> {
    let file = fs::File::open(path).map_err(|e| SluError::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(|e| SluError::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TargetLine = serde_json::from_str(&line)?;
        out.push((
            parsed.id,
            TargetSequence {
                symbols: vocab.ids_for(&parsed.symbols)?,
                variant: parsed.variant,
            },
        ));
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
pub struct PredictionLine {
    pub id: String,
    pub symbols: Vec<String>,
    pub truncated: bool,
}

pub fn save_predictions(items: &[PredictionLine], path: &Path) -> Result<()> {
    let file =
        fs::File::create(path).map_err(|e| SluError::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")
            .map_err(|e| SluError::io(path.display().to_string(), e))?;
    }
    w.flush()
        .map_err(|e| SluError::io(path.display().to_string(), e))
}

pub fn load_predictions(path: &Path) -> Result<Vec<PredictionLine>> {
    let file = fs::File::open(path).map_err(|e| SluError::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(|e| SluError::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::generate_corpus;
    use crate::targets::{make_target, Variant};

    #[test]
    fn corpus_round_trips_through_jsonl() {
        let spec = CorpusSpec::with_defaults(12, 5);
        let corpus = generate_corpus(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        save_corpus(&corpus, &path).unwrap();
        let loaded = load_corpus(&path, &vocab_sidecar_path(&path)).unwrap();
        assert_eq!(loaded.utterances.len(), corpus.utterances.len());
        for (a, b) in corpus.utterances.iter().zip(loaded.utterances.iter()) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.transcript, b.transcript);
            assert_eq!(a.frames.data, b.frames.data);
            assert_eq!(a.entities, b.entities);
            assert_eq!(a.intent, b.intent);
            assert_eq!(a.token_frame_spans, b.token_frame_spans);
        }
        assert_eq!(loaded.spec.seed, spec.seed);
    }

    #[test]
    fn targets_round_trip() {
        let spec = CorpusSpec::with_defaults(4, 6);
        let corpus = generate_corpus(&spec).unwrap();
        let items: Vec<(String, TargetSequence)> = corpus
            .utterances
            .iter()
            .map(|u| {
                (
                    u.id.clone(),
                    make_target(u, &corpus.vocab, Variant::AlphabeticOrder, None).unwrap(),
                )
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("targets.jsonl");
        save_targets(&items, &corpus.vocab, &path).unwrap();
        let loaded = load_targets(&path, &corpus.vocab).unwrap();
        assert_eq!(items.len(), loaded.len());
        for ((ida, ta), (idb, tb)) in items.iter().zip(loaded.iter()) {
            assert_eq!(ida, idb);
            assert_eq!(ta, tb);
        }
    }
}
