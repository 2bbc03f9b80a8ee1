//! Self-describing model checkpoints: a JSON container with a version tag,
//! model type, config, vocab and the flat named parameter tensors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attn::{AttnConfig, AttnModel};
use crate::error::{Result, SluError};
use crate::io::{read_json, write_json};
use crate::nn::params::ParamEntry;
use crate::rnnt::{RnntConfig, RnntModel};
use crate::vocab::Vocab;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    model_type: String,
    config: serde_json::Value,
    vocab: Vocab,
    params: Vec<ParamEntry>,
}

pub enum ModelCheckpoint {
    Attn(AttnModel),
    Rnnt(RnntModel),
}

impl ModelCheckpoint {
    pub fn model_type(&self) -> &'static str {
        match self {
            ModelCheckpoint::Attn(_) => "attn",
            ModelCheckpoint::Rnnt(_) => "rnnt",
        }
    }

    pub fn expect_attn(self) -> Result<AttnModel> {
        match self {
            ModelCheckpoint::Attn(m) => Ok(m),
            ModelCheckpoint::Rnnt(_) => Err(SluError::validation(
                "model",
                "expected an attention checkpoint, found a transducer",
            )),
        }
    }

    pub fn expect_rnnt(self) -> Result<RnntModel> {
        match self {
            ModelCheckpoint::Rnnt(m) => Ok(m),
            ModelCheckpoint::Attn(_) => Err(SluError::validation(
                "model",
                "expected a transducer checkpoint, found an attention model",
            )),
        }
    }
}

pub fn save_attn(model: &AttnModel, path: &Path) -> Result<()> {
    let file = CheckpointFile {
        format_version: FORMAT_VERSION,
        model_type: "attn".to_string(),
        config: serde_json::to_value(&model.config)?,
        vocab: model.vocab.clone(),
        params: model.params.iter().map(|(_, e)| e.clone()).collect(),
    };
    write_json(path, &file)
}

pub fn save_rnnt(model: &RnntModel, path: &Path) -> Result<()> {
    let file = CheckpointFile {
        format_version: FORMAT_VERSION,
        model_type: "rnnt".to_string(),
        config: serde_json::to_value(&model.config)?,
        vocab: model.vocab.clone(),
        params: model.params.iter().map(|(_, e)| e.clone()).collect(),
    };
    write_json(path, &file)
}

fn restore_params(
    params: &mut crate::nn::ParamSet,
    saved: Vec<ParamEntry>,
    path: &Path,
) -> Result<()> {
    if saved.len() != params.len() {
        return Err(SluError::validation(
            "checkpoint",
            format!(
                "{}: expected {} parameter tensors, found {}",
                path.display(),
                params.len(),
                saved.len()
            ),
        ));
    }
    for entry in saved {
        let idx = params.index_of(&entry.name).ok_or_else(|| {
            SluError::validation(
                "checkpoint",
                format!("{}: unknown parameter `{}`", path.display(), entry.name),
            )
        })?;
        let dst = params.tensor_mut(idx);
        if (dst.rows, dst.cols) != (entry.tensor.rows, entry.tensor.cols) {
            return Err(SluError::validation(
                "checkpoint",
                format!(
                    "{}: parameter `{}` has shape {}x{}, expected {}x{}",
                    path.display(),
                    entry.name,
                    entry.tensor.rows,
                    entry.tensor.cols,
                    dst.rows,
                    dst.cols
                ),
            ));
        }
        *dst = entry.tensor;
    }
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelCheckpoint> {
    let file: CheckpointFile = read_json(path)?;
    if file.format_version != FORMAT_VERSION {
        return Err(SluError::validation(
            "checkpoint",
            format!(
                "{}: format version {} unsupported (expected {})",
                path.display(),
                file.format_version,
                FORMAT_VERSION
            ),
        ));
    }
    let mut vocab = file.vocab;
    vocab.reindex()?;
    match file.model_type.as_str() {
        "attn" => {
            let config: AttnConfig = serde_json::from_value(file.config)?;
            let mut model = AttnModel::new(config, vocab)?;
            restore_params(&mut model.params, file.params, path)?;
            Ok(ModelCheckpoint::Attn(model))
        }
        "rnnt" => {
            let config: RnntConfig = serde_json::from_value(file.config)?;
            let mut model = RnntModel::new(config, vocab)?;
            restore_params(&mut model.params, file.params, path)?;
            Ok(ModelCheckpoint::Rnnt(model))
        }
        other => Err(SluError::validation(
            "checkpoint",
            format!("{}: unknown model type `{other}`", path.display()),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, CorpusSpec};
    use crate::targets::{make_target, Variant};

    #[test]
    fn attn_checkpoint_round_trip_is_exact() {
        let spec = CorpusSpec::with_defaults(2, 9);
        let corpus = generate_corpus(&spec).unwrap();
        let cfg = AttnConfig {
            encoder_layers: 1,
            encoder_units: 5,
            decoder_units: 6,
            attention_dim: 4,
            location_conv_filters: 2,
            embed_dim: 3,
            ..AttnConfig::new(spec.frame_dim, corpus.vocab.size(), 4)
        };
        let model = AttnModel::new(cfg, corpus.vocab.clone()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_attn(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap().expect_attn().unwrap();
        let utt = &corpus.utterances[0];
        let t = make_target(utt, &corpus.vocab, Variant::SpokenOrder, None).unwrap();
        let a = model.utterance_nll(&utt.frames, &t.symbols).unwrap();
        let b = loaded.utterance_nll(&utt.frames, &t.symbols).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rnnt_checkpoint_round_trip_and_type_tag() {
        let spec = CorpusSpec::with_defaults(2, 10);
        let corpus = generate_corpus(&spec).unwrap();
        let cfg = RnntConfig {
            encoder_layers: 1,
            encoder_units: 5,
            pred_units: 5,
            joint_dim: 4,
            embed_dim: 3,
            ..RnntConfig::new(spec.frame_dim, corpus.vocab.size(), 4)
        };
        let model = RnntModel::new(cfg, corpus.vocab.clone()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_rnnt(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded.model_type(), "rnnt");
        assert!(loaded.expect_attn().is_err());
    }
}
