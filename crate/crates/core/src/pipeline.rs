//! Experiment orchestration: corpora, training recipes, alignment, decoding
//! and scoring, all derived deterministically from one config and seed.
//!
//! Rows mirror the experiment grid:
//!   1  full transcripts
//!   2  entities in spoken order
//!   3  entities in alphabetic order
//!   4  random-order augmentation (pretrain random, finetune alphabetic)
//!   4-control  alphabetic in both phases (budget control for row 4)
//!   5  spoken order recovered by keyword-HMM alignment
//!   6  spoken order recovered by attention alignment
//!   7  random-order pretraining plus finetuning on attention-aligned order
//!
//! Rows 6 and 7 use the attention-family row-3 model (same corpus variant)
//! as the aligner, for every model family.
//!
//! Row 1 doubles as the pretrained base: every other row warm-starts from
//! the full-transcript model of its family, mirroring the adaptation-from-ASR
//! scheme. Training entity-only transducers from random initialization is
//! wildly seed-dependent; adapting a converged base is not.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::align::{align_corpus_attention, align_corpus_hmm, AlignmentErrorReport, HmmAlignParams};
use crate::attn::{train_attn, AttnConfig, AttnModel};
use crate::checkpoint;
use crate::corpus::{generate_corpus, make_noisy, Corpus, CorpusSpec};
use crate::error::{Result, SluError};
use crate::eval::{decoded_meaning, intent_accuracy, slot_f1, wer, EntityTuple, ScoreReport};
use crate::io;
use crate::rng::hash_str;
use crate::rnnt::{train_rnnt, RnntConfig, RnntModel};
use crate::targets::{TargetSequence, Variant};
use crate::training::{
    FixedVariantProvider, InitFrom, PrecomputedProvider, RandomOrderProvider, TargetProvider,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Rnnt,
    Attn,
}

impl ModelFamily {
    pub fn parse_cli(s: &str) -> Result<Self> {
        match s {
            "rnnt" => Ok(ModelFamily::Rnnt),
            "attn" => Ok(ModelFamily::Attn),
            _ => Err(SluError::validation(
                "family",
                format!("unknown model family `{s}` (rnnt|attn)"),
            )),
        }
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelFamily::Rnnt => write!(f, "rnnt"),
            ModelFamily::Attn => write!(f, "attn"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusVariant {
    Clean,
    Noisy,
}

impl CorpusVariant {
    pub fn suffix(self) -> &'static str {
        match self {
            CorpusVariant::Clean => "c",
            CorpusVariant::Noisy => "n",
        }
    }

    pub fn parse_cli(s: &str) -> Result<Self> {
        match s {
            "clean" | "c" => Ok(CorpusVariant::Clean),
            "noisy" | "n" => Ok(CorpusVariant::Noisy),
            _ => Err(SluError::validation(
                "corpus_variant",
                format!("unknown corpus variant `{s}` (clean|noisy)"),
            )),
        }
    }
}

impl fmt::Display for CorpusVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CorpusVariant::Clean => write!(f, "clean"),
            CorpusVariant::Noisy => write!(f, "noisy"),
        }
    }
}

/// Experiment grid row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Row {
    FullTranscripts,
    SpokenOrder,
    AlphabeticOrder,
    RandomAugmentation,
    AugmentationControl,
    AlignHmm,
    AlignAttention,
    AlignAttentionAugmented,
}

pub const ALL_ROWS: [Row; 8] = [
    Row::FullTranscripts,
    Row::SpokenOrder,
    Row::AlphabeticOrder,
    Row::RandomAugmentation,
    Row::AugmentationControl,
    Row::AlignHmm,
    Row::AlignAttention,
    Row::AlignAttentionAugmented,
];

impl Row {
    pub fn id(self) -> &'static str {
        match self {
            Row::FullTranscripts => "1",
            Row::SpokenOrder => "2",
            Row::AlphabeticOrder => "3",
            Row::RandomAugmentation => "4",
            Row::AugmentationControl => "4-control",
            Row::AlignHmm => "5",
            Row::AlignAttention => "6",
            Row::AlignAttentionAugmented => "7",
        }
    }

    pub fn parse_cli(s: &str) -> Result<Self> {
        ALL_ROWS
            .into_iter()
            .find(|r| r.id() == s)
            .ok_or_else(|| {
                SluError::validation(
                    "row",
                    format!("unknown row `{s}` (1|2|3|4|4-control|5|6|7)"),
                )
            })
    }

    pub fn describe(self) -> &'static str {
        match self {
            Row::FullTranscripts => "Full transcripts",
            Row::SpokenOrder => "Entities, spoken order",
            Row::AlphabeticOrder => "Entities, alphabetic order",
            Row::RandomAugmentation => "Random order augmentation",
            Row::AugmentationControl => "Alphabetic order in both phases (control)",
            Row::AlignHmm => "Spoken order alignment-H",
            Row::AlignAttention => "Spoken order alignment-A",
            Row::AlignAttentionAugmented => "+ Random order augmentation",
        }
    }
}

/// Model-shape and optimizer settings independent of corpus dimensions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttnSettings {
    #[serde(default)]
    pub lr_final: Option<f64>,
    pub encoder_layers: usize,
    pub encoder_units: usize,
    pub decoder_units: usize,
    pub attention_dim: usize,
    pub location_conv_width: usize,
    pub location_conv_filters: usize,
    pub embed_dim: usize,
    pub learning_rate: f64,
    pub epochs_per_phase: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub clip_norm: f64,
}

impl Default for AttnSettings {
    fn default() -> Self {
        AttnSettings {
            lr_final: None,
            encoder_layers: 1,
            encoder_units: 8,
            decoder_units: 32,
            attention_dim: 16,
            location_conv_width: 7,
            location_conv_filters: 4,
            embed_dim: 8,
            learning_rate: 1e-2,
            epochs_per_phase: 45,
            batch_size: 4,
            dropout: 0.2,
            clip_norm: 5.0,
        }
    }
}

impl AttnSettings {
    pub fn to_config(&self, frame_dim: usize, vocab_size: usize, seed: u64) -> AttnConfig {
        let mut cfg = AttnConfig::new(frame_dim, vocab_size, seed);
        cfg.encoder_layers = self.encoder_layers;
        cfg.encoder_units = self.encoder_units;
        cfg.decoder_units = self.decoder_units;
        cfg.attention_dim = self.attention_dim;
        cfg.location_conv_width = self.location_conv_width;
        cfg.location_conv_filters = self.location_conv_filters;
        cfg.embed_dim = self.embed_dim;
        cfg.learning_rate = self.learning_rate;
        cfg.lr_final = self.lr_final;
        cfg.epochs_per_phase = self.epochs_per_phase;
        cfg.batch_size = self.batch_size;
        cfg.dropout = self.dropout;
        cfg.clip_norm = self.clip_norm;
        cfg
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RnntSettings {
    #[serde(default)]
    pub lr_final: Option<f64>,
    pub encoder_layers: usize,
    pub encoder_units: usize,
    pub pred_units: usize,
    pub joint_dim: usize,
    pub embed_dim: usize,
    pub learning_rate: f64,
    pub epochs_per_phase: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub clip_norm: f64,
    pub max_symbols_per_frame: usize,
}

impl Default for RnntSettings {
    fn default() -> Self {
        RnntSettings {
            lr_final: Some(4e-3),
            encoder_layers: 1,
            encoder_units: 24,
            pred_units: 24,
            joint_dim: 32,
            embed_dim: 8,
            learning_rate: 2e-2,
            epochs_per_phase: 96,
            batch_size: 4,
            dropout: 0.15,
            clip_norm: 1.0,
            max_symbols_per_frame: 4,
        }
    }
}

impl RnntSettings {
    pub fn to_config(&self, frame_dim: usize, vocab_size: usize, seed: u64) -> RnntConfig {
        let mut cfg = RnntConfig::new(frame_dim, vocab_size, seed);
        cfg.encoder_layers = self.encoder_layers;
        cfg.encoder_units = self.encoder_units;
        cfg.pred_units = self.pred_units;
        cfg.joint_dim = self.joint_dim;
        cfg.embed_dim = self.embed_dim;
        cfg.learning_rate = self.learning_rate;
        cfg.lr_final = self.lr_final;
        cfg.epochs_per_phase = self.epochs_per_phase;
        cfg.batch_size = self.batch_size;
        cfg.dropout = self.dropout;
        cfg.clip_norm = self.clip_norm;
        cfg.max_symbols_per_frame = self.max_symbols_per_frame;
        cfg
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub seed: u64,
    #[serde(default = "d_train_utts")]
    pub train_utterances: usize,
    #[serde(default = "d_test_utts")]
    pub test_utterances: usize,
    #[serde(default = "d_frame_dim")]
    pub frame_dim: usize,
    #[serde(default = "d_n_cities")]
    pub n_cities: usize,
    #[serde(default = "d_n_times")]
    pub n_times: usize,
    #[serde(default = "d_n_airlines")]
    pub n_airlines: usize,
    #[serde(default = "d_frames_per_token")]
    pub frames_per_token_range: (usize, usize),
    #[serde(default = "d_clean_sigma")]
    pub clean_sigma: f64,
    #[serde(default = "d_noisy_extra_sigma")]
    pub noisy_extra_sigma: f64,
    #[serde(default)]
    pub attn: AttnSettings,
    #[serde(default)]
    pub rnnt: RnntSettings,
    #[serde(default)]
    pub hmm: HmmAlignParams,
    #[serde(default = "d_max_decode_len")]
    pub max_decode_len: usize,
}

fn d_train_utts() -> usize {
    384
}
fn d_test_utts() -> usize {
    96
}
fn d_frame_dim() -> usize {
    16
}
fn d_frames_per_token() -> (usize, usize) {
    (2, 4)
}
fn d_n_cities() -> usize {
    14
}
fn d_n_times() -> usize {
    8
}
fn d_n_airlines() -> usize {
    6
}
fn d_clean_sigma() -> f64 {
    crate::corpus::CLEAN_SIGMA
}
fn d_noisy_extra_sigma() -> f64 {
    crate::corpus::NOISY_EXTRA_SIGMA
}
fn d_max_decode_len() -> usize {
    60
}

impl PipelineConfig {
    pub fn with_seed(seed: u64) -> Self {
        PipelineConfig {
            seed,
            train_utterances: d_train_utts(),
            test_utterances: d_test_utts(),
            frame_dim: d_frame_dim(),
            n_cities: d_n_cities(),
            n_times: d_n_times(),
            n_airlines: d_n_airlines(),
            frames_per_token_range: d_frames_per_token(),
            clean_sigma: d_clean_sigma(),
            noisy_extra_sigma: d_noisy_extra_sigma(),
            attn: AttnSettings::default(),
            rnnt: RnntSettings::default(),
            hmm: HmmAlignParams::default(),
            max_decode_len: d_max_decode_len(),
        }
    }

    /// One spec covers train and test: both splits share the same token
    /// embedding space and vocab, differing only in utterance indices.
    fn corpus_spec(&self) -> CorpusSpec {
        let n = self.train_utterances + self.test_utterances;
        CorpusSpec {
            n_utterances: n,
            frame_dim: self.frame_dim,
            n_cities: self.n_cities,
            n_times: self.n_times,
            n_airlines: self.n_airlines,
            frames_per_token_range: self.frames_per_token_range,
            noise_sigma: self.clean_sigma,
            seed: self.seed.wrapping_mul(1_000_003).wrapping_add(101),
            ..CorpusSpec::with_defaults(n, 0)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub row: Row,
    pub family: ModelFamily,
    pub corpus_variant: CorpusVariant,
}

impl ExperimentSpec {
    pub fn label(&self) -> String {
        format!("{}{}", self.row.id(), self.corpus_variant.suffix())
    }

    pub fn full_id(&self) -> String {
        format!("{}-{}", self.family, self.label())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub row: String,
    pub family: ModelFamily,
    pub corpus_variant: CorpusVariant,
    pub description: String,
    pub content_hash: String,
    pub metrics: ScoreReport,
    pub alignment_error: Option<AlignmentErrorReport>,
    pub wall_time_secs: f64,
    pub artifacts: Vec<String>,
}

/// On-disk artifact store. Every build is guarded by a lockfile so parallel
/// processes sharing the store never duplicate work.
pub struct ArtifactStore {
    pub out_dir: PathBuf,
    pub config: PipelineConfig,
}

struct LockGuard {
    path: PathBuf,
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

impl ArtifactStore {
    pub fn new(out_dir: impl Into<PathBuf>, config: PipelineConfig) -> Result<Self> {
        let out_dir = out_dir.into();
        for sub in ["corpus", "models", "targets", "preds", "reports", "runs"] {
            let dir = out_dir.join(sub);
            fs::create_dir_all(&dir).map_err(|e| SluError::io(dir.display().to_string(), e))?;
        }
        Ok(ArtifactStore { out_dir, config })
    }

    fn lock(&self, artifact: &Path) -> Result<LockGuard> {
        let path = artifact.with_extension("lock");
        let deadline = Instant::now() + std::time::Duration::from_secs(600);
        loop {
            match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(_) => return Ok(LockGuard { path }),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    if Instant::now() > deadline {
                        return Err(SluError::Dependency(format!(
                            "lock {} held too long",
                            path.display()
                        )));
                    }
                    std::thread::sleep(std::time::Duration::from_millis(100));
                }
                Err(e) => return Err(SluError::io(path.display().to_string(), e)),
            }
        }
    }

    fn corpus_path(&self, split: Split, variant: CorpusVariant) -> PathBuf {
        let name = match (split, variant) {
            (Split::Train, CorpusVariant::Clean) => "train-clean.jsonl",
            (Split::Train, CorpusVariant::Noisy) => "train-noisy.jsonl",
            (Split::Test, CorpusVariant::Clean) => "test-clean.jsonl",
            (Split::Test, CorpusVariant::Noisy) => "test-noisy.jsonl",
        };
        self.out_dir.join("corpus").join(name)
    }

    fn build_corpus(&self, split: Split, variant: CorpusVariant) -> Result<Corpus> {
        let full = generate_corpus(&self.config.corpus_spec())?;
        let n_train = self.config.train_utterances;
        let utterances = match split {
            Split::Train => full.utterances[..n_train].to_vec(),
            Split::Test => full.utterances[n_train..].to_vec(),
        };
        let clean = Corpus {
            vocab: full.vocab,
            spec: full.spec,
            utterances,
        };
        match variant {
            CorpusVariant::Clean => Ok(clean),
            CorpusVariant::Noisy => {
                let noise_seed = self.config.seed.wrapping_mul(7_919).wrapping_add(match split {
                    Split::Train => 201,
                    Split::Test => 202,
                });
                make_noisy(&clean, self.config.noisy_extra_sigma, noise_seed)
            }
        }
    }

    fn ensure_corpus(&self, split: Split, variant: CorpusVariant) -> Result<Corpus> {
        let path = self.corpus_path(split, variant);
        if !path.exists() {
            let _guard = self.lock(&path)?;
            if !path.exists() {
                let corpus = self.build_corpus(split, variant)?;
                io::save_corpus(&corpus, &path)?;
                return Ok(corpus);
            }
        }
        io::load_corpus(&path, &io::vocab_sidecar_path(&path))
    }

    pub fn model_path(&self, family: ModelFamily, row: Row, variant: CorpusVariant) -> PathBuf {
        self.out_dir
            .join("models")
            .join(format!("{family}-{}{}.json", row.id(), variant.suffix()))
    }

    fn aligned_targets_path(&self, row: Row, variant: CorpusVariant) -> PathBuf {
        let method = match row {
            Row::AlignHmm => "hmm",
            _ => "attn",
        };
        self.out_dir
            .join("targets")
            .join(format!("aligned-{method}-{}.jsonl", variant.suffix()))
    }

    fn alignment_report_path(&self, row: Row, variant: CorpusVariant) -> PathBuf {
        let method = match row {
            Row::AlignHmm => "hmm",
            _ => "attn",
        };
        self.out_dir
            .join("reports")
            .join(format!("alignment-{method}-{}.json", variant.suffix()))
    }

    /// Estimated spoken-order targets for the training corpus, plus the
    /// alignment error report. Rows 6 and 7 share the attention alignment.
    fn ensure_aligned_targets(
        &self,
        row: Row,
        variant: CorpusVariant,
        auto_deps: bool,
    ) -> Result<(Vec<(String, TargetSequence)>, AlignmentErrorReport)> {
        let path = self.aligned_targets_path(row, variant);
        let report_path = self.alignment_report_path(row, variant);
        let train = self.ensure_corpus(Split::Train, variant)?;
        if path.exists() && report_path.exists() {
            let targets = io::load_targets(&path, &train.vocab)?;
            let report: AlignmentErrorReport = io::read_json(&report_path)?;
            return Ok((targets, report));
        }
        let _guard = self.lock(&path)?;
        let alignment = match row {
            Row::AlignHmm => align_corpus_hmm(&train, &self.config.hmm)?,
            _ => {
                let aligner = self.ensure_attn_model(Row::AlphabeticOrder, variant, auto_deps)?;
                align_corpus_attention(&aligner, &train)?
            }
        };
        let items: Vec<(String, TargetSequence)> = train
            .utterances
            .iter()
            .map(|u| u.id.clone())
            .zip(alignment.targets.iter().cloned())
            .collect();
        io::save_targets(&items, &train.vocab, &path)?;
        io::write_json(&report_path, &alignment.report)?;
        Ok((items, alignment.report))
    }

    fn ensure_attn_model(
        &self,
        row: Row,
        variant: CorpusVariant,
        auto_deps: bool,
    ) -> Result<AttnModel> {
        let path = self.model_path(ModelFamily::Attn, row, variant);
        if path.exists() {
            return checkpoint::load_model(&path)?.expect_attn();
        }
        if !auto_deps {
            return Err(SluError::Dependency(format!(
                "missing model for row attn-{}{} at {} (run it first or allow auto deps)",
                row.id(),
                variant.suffix(),
                path.display()
            )));
        }
        let _guard = self.lock(&path)?;
        if path.exists() {
            return checkpoint::load_model(&path)?.expect_attn();
        }
        let model = self.train_attn_row(row, variant, auto_deps)?;
        checkpoint::save_attn(&model, &path)?;
        Ok(model)
    }

    fn ensure_rnnt_model(
        &self,
        row: Row,
        variant: CorpusVariant,
        auto_deps: bool,
    ) -> Result<RnntModel> {
        let path = self.model_path(ModelFamily::Rnnt, row, variant);
        if path.exists() {
            return checkpoint::load_model(&path)?.expect_rnnt();
        }
        if !auto_deps {
            return Err(SluError::Dependency(format!(
                "missing model for row rnnt-{}{} at {} (run it first or allow auto deps)",
                row.id(),
                variant.suffix(),
                path.display()
            )));
        }
        let _guard = self.lock(&path)?;
        if path.exists() {
            return checkpoint::load_model(&path)?.expect_rnnt();
        }
        let model = self.train_rnnt_row(row, variant, auto_deps)?;
        checkpoint::save_rnnt(&model, &path)?;
        Ok(model)
    }

    /// Seed for one training phase, unique per (family, row, variant, phase).
    fn phase_seed(&self, family: ModelFamily, row: Row, variant: CorpusVariant, phase: u64) -> u64 {
        self.config
            .seed
            .wrapping_mul(31)
            .wrapping_add(hash_str(&format!(
                "{family}-{}-{}-{phase}",
                row.id(),
                variant.suffix()
            )))
    }

    /// The training recipe for a row, shared by both families through the
    /// provider abstraction.
    fn row_phases(
        &self,
        row: Row,
        variant: CorpusVariant,
        auto_deps: bool,
    ) -> Result<(Vec<RecipePhase>, Option<AlignmentErrorReport>)> {
        Ok(match row {
            Row::FullTranscripts => (
                vec![RecipePhase::Fixed(Variant::FullTranscript)],
                None,
            ),
            Row::SpokenOrder => (vec![RecipePhase::Fixed(Variant::SpokenOrder)], None),
            Row::AlphabeticOrder => (vec![RecipePhase::Fixed(Variant::AlphabeticOrder)], None),
            Row::RandomAugmentation => (
                vec![
                    RecipePhase::Random,
                    RecipePhase::Fixed(Variant::AlphabeticOrder),
                ],
                None,
            ),
            Row::AugmentationControl => (
                vec![
                    RecipePhase::Fixed(Variant::AlphabeticOrder),
                    RecipePhase::Fixed(Variant::AlphabeticOrder),
                ],
                None,
            ),
            Row::AlignHmm => {
                let (targets, report) = self.ensure_aligned_targets(row, variant, auto_deps)?;
                (
                    vec![RecipePhase::Precomputed(
                        targets.into_iter().map(|(_, t)| t).collect(),
                    )],
                    Some(report),
                )
            }
            Row::AlignAttention => {
                let (targets, report) = self.ensure_aligned_targets(row, variant, auto_deps)?;
                (
                    vec![RecipePhase::Precomputed(
                        targets.into_iter().map(|(_, t)| t).collect(),
                    )],
                    Some(report),
                )
            }
            Row::AlignAttentionAugmented => {
                let (targets, report) = self.ensure_aligned_targets(row, variant, auto_deps)?;
                (
                    vec![
                        RecipePhase::Random,
                        RecipePhase::Precomputed(
                            targets.into_iter().map(|(_, t)| t).collect(),
                        ),
                    ],
                    Some(report),
                )
            }
        })
    }

    fn train_attn_row(
        &self,
        row: Row,
        variant: CorpusVariant,
        auto_deps: bool,
    ) -> Result<AttnModel> {
        let train = self.ensure_corpus(Split::Train, variant)?;
        let (phases, _) = self.row_phases(row, variant, auto_deps)?;
        let mut model: Option<AttnModel> = if row == Row::FullTranscripts {
            None
        } else {
            Some(self.ensure_attn_model(Row::FullTranscripts, variant, auto_deps)?)
        };
        for (i, phase) in phases.iter().enumerate() {
            let seed = self.phase_seed(ModelFamily::Attn, row, variant, i as u64);
            let cfg = self
                .config
                .attn
                .to_config(train.spec.frame_dim, train.vocab.size(), seed);
            let provider = phase.provider(seed);
            let (next, _trace) = match &model {
                None => train_attn(&train, provider.as_ref(), cfg, InitFrom::Random)?,
                Some(prev) => train_attn(&train, provider.as_ref(), cfg, InitFrom::Model(prev))?,
            };
            model = Some(next);
        }
        Ok(model.expect("at least one phase per row"))
    }

    fn train_rnnt_row(
        &self,
        row: Row,
        variant: CorpusVariant,
        auto_deps: bool,
    ) -> Result<RnntModel> {
        let train = self.ensure_corpus(Split::Train, variant)?;
        let (phases, _) = self.row_phases(row, variant, auto_deps)?;
        let mut model: Option<RnntModel> = if row == Row::FullTranscripts {
            None
        } else {
            Some(self.ensure_rnnt_model(Row::FullTranscripts, variant, auto_deps)?)
        };
        for (i, phase) in phases.iter().enumerate() {
            let seed = self.phase_seed(ModelFamily::Rnnt, row, variant, i as u64);
            let cfg = self
                .config
                .rnnt
                .to_config(train.spec.frame_dim, train.vocab.size(), seed);
            let provider = phase.provider(seed);
            let (next, _trace) = match &model {
                None => train_rnnt(&train, provider.as_ref(), cfg, InitFrom::Random)?,
                Some(prev) => train_rnnt(&train, provider.as_ref(), cfg, InitFrom::Model(prev))?,
            };
            model = Some(next);
        }
        Ok(model.expect("at least one phase per row"))
    }

    fn preds_path(&self, spec: &ExperimentSpec) -> PathBuf {
        self.out_dir
            .join("preds")
            .join(format!("{}.jsonl", spec.full_id()))
    }

    fn report_path(&self, spec: &ExperimentSpec) -> PathBuf {
        self.out_dir
            .join("reports")
            .join(format!("{}.json", spec.full_id()))
    }

    fn run_record_path(&self, spec: &ExperimentSpec) -> PathBuf {
        self.out_dir
            .join("runs")
            .join(format!("{}.json", spec.full_id()))
    }

    /// Decode the test split with the row's model and score it.
    fn evaluate_model(
        &self,
        spec: &ExperimentSpec,
        test: &Corpus,
        decode: impl Fn(&crate::nn::Tensor) -> Result<(Vec<u32>, bool)> + Sync,
    ) -> Result<ScoreReport> {
        use rayon::prelude::*;
        let decoded: Vec<(String, Vec<u32>, bool)> = test
            .utterances
            .par_iter()
            .map(|utt| {
                let (symbols, truncated) = decode(&utt.frames)?;
                Ok((utt.id.clone(), symbols, truncated))
            })
            .collect::<Result<Vec<_>>>()?;

        let pred_lines: Vec<io::PredictionLine> = decoded
            .iter()
            .map(|(id, symbols, truncated)| io::PredictionLine {
                id: id.clone(),
                symbols: test.vocab.render(symbols),
                truncated: *truncated,
            })
            .collect();
        io::save_predictions(&pred_lines, &self.preds_path(spec))?;

        score_predictions(test, &decoded)
    }

    /// Execute one experiment end to end. Reruns with the same spec reuse
    /// cached artifacts and reproduce metrics exactly.
    pub fn run_experiment(&self, spec: &ExperimentSpec, auto_deps: bool) -> Result<RunRecord> {
        let start = Instant::now();
        let test = self.ensure_corpus(Split::Test, spec.corpus_variant)?;
        let alignment_error = match spec.row {
            Row::AlignHmm | Row::AlignAttention | Row::AlignAttentionAugmented => Some(
                self.ensure_aligned_targets(spec.row, spec.corpus_variant, auto_deps)?
                    .1,
            ),
            _ => None,
        };
        let metrics = match spec.family {
            ModelFamily::Attn => {
                let model = self.ensure_attn_model(spec.row, spec.corpus_variant, auto_deps)?;
                let max_len = self.config.max_decode_len;
                self.evaluate_model(spec, &test, |frames| {
                    let out = model.decode(frames, max_len)?;
                    Ok((out.symbols, out.truncated))
                })?
            }
            ModelFamily::Rnnt => {
                let model = self.ensure_rnnt_model(spec.row, spec.corpus_variant, auto_deps)?;
                let cap = model.config.max_symbols_per_frame;
                self.evaluate_model(spec, &test, |frames| {
                    Ok((model.greedy_decode(frames, cap)?, false))
                })?
            }
        };
        io::write_json(&self.report_path(spec), &metrics)?;
        let record = RunRecord {
            row: spec.row.id().to_string(),
            family: spec.family,
            corpus_variant: spec.corpus_variant,
            description: spec.row.describe().to_string(),
            content_hash: self.content_hash(spec),
            metrics,
            alignment_error,
            wall_time_secs: start.elapsed().as_secs_f64(),
            artifacts: vec![
                self.model_path(spec.family, spec.row, spec.corpus_variant)
                    .display()
                    .to_string(),
                self.preds_path(spec).display().to_string(),
                self.report_path(spec).display().to_string(),
            ],
        };
        io::write_json(&self.run_record_path(spec), &record)?;
        Ok(record)
    }

    fn content_hash(&self, spec: &ExperimentSpec) -> String {
        let payload = format!(
            "{}|{}",
            serde_json::to_string(&self.config).unwrap_or_default(),
            serde_json::to_string(spec).unwrap_or_default(),
        );
        format!("{:016x}", hash_str(&payload))
    }
}

enum RecipePhase {
    Fixed(Variant),
    Random,
    Precomputed(Vec<TargetSequence>),
}

impl RecipePhase {
    fn provider(&self, seed: u64) -> Box<dyn TargetProvider + '_> {
        match self {
            RecipePhase::Fixed(v) => Box::new(FixedVariantProvider(*v)),
            RecipePhase::Random => Box::new(RandomOrderProvider { seed }),
            RecipePhase::Precomputed(targets) => Box::new(PrecomputedProvider {
                targets: targets.clone(),
            }),
        }
    }
}

/// Score decoded symbol sequences against the test corpus ground truth.
/// WER is computed against full transcripts for every row.
pub fn score_predictions(
    test: &Corpus,
    decoded: &[(String, Vec<u32>, bool)],
) -> Result<ScoreReport> {
    let mut pred_entities = Vec::with_capacity(decoded.len());
    let mut pred_intents = Vec::with_capacity(decoded.len());
    let mut hyp_tokens = Vec::with_capacity(decoded.len());
    let mut flagged = 0usize;
    for (id, symbols, truncated) in decoded {
        let meaning = decoded_meaning(symbols, &test.vocab)?;
        if meaning.flagged || *truncated {
            flagged += 1;
        }
        pred_entities.push((id.clone(), meaning.entities));
        pred_intents.push((id.clone(), meaning.intent));
        hyp_tokens.push(meaning.spoken_tokens);
    }

    let mut ref_entities = Vec::with_capacity(test.len());
    let mut ref_intents = Vec::with_capacity(test.len());
    let mut ref_tokens = Vec::with_capacity(test.len());
    for utt in &test.utterances {
        let ents = utt
            .entities
            .iter()
            .map(|e| EntityTuple {
                label_name: e.label_name.clone(),
                value: utt.transcript[e.start..e.end]
                    .iter()
                    .map(|&t| test.vocab.token(t).to_string())
                    .collect(),
            })
            .collect();
        ref_entities.push((utt.id.clone(), ents));
        ref_intents.push((
            utt.id.clone(),
            test.vocab
                .intent_name(utt.intent)
                .unwrap_or_default()
                .to_string(),
        ));
        ref_tokens.push(
            utt.transcript
                .iter()
                .map(|&t| test.vocab.token(t).to_string())
                .collect::<Vec<_>>(),
        );
    }

    let slots = slot_f1(&pred_entities, &ref_entities)?;
    let intent = intent_accuracy(&pred_intents, &ref_intents)?;
    let word_error = wer(&hyp_tokens, &ref_tokens)?;
    Ok(ScoreReport {
        slots,
        intent_accuracy: intent,
        wer: word_error,
        flagged_utterances: flagged,
        wer_reference: "full-transcripts".to_string(),
    })
}

/// One grid line: a run record or the error that stopped it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridLine {
    pub row: String,
    pub family: ModelFamily,
    pub corpus_variant: CorpusVariant,
    pub record: Option<RunRecord>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridResult {
    pub lines: Vec<GridLine>,
    pub csv: String,
}

/// Run every experiment in order; failures are recorded, not fatal.
/// Writes `grid.csv` and `grid.json` under the store.
pub fn run_grid(store: &ArtifactStore, specs: &[ExperimentSpec]) -> Result<GridResult> {
    let mut lines = Vec::with_capacity(specs.len());
    for spec in specs {
        match store.run_experiment(spec, true) {
            Ok(record) => lines.push(GridLine {
                row: spec.row.id().to_string(),
                family: spec.family,
                corpus_variant: spec.corpus_variant,
                record: Some(record),
                error: None,
            }),
            Err(e) => lines.push(GridLine {
                row: spec.row.id().to_string(),
                family: spec.family,
                corpus_variant: spec.corpus_variant,
                record: None,
                error: Some(e.to_string()),
            }),
        }
    }
    let csv = grid_csv(&lines);
    let result = GridResult { lines, csv };
    fs::write(store.out_dir.join("grid.csv"), &result.csv)
        .map_err(|e| SluError::io("grid.csv".to_string(), e))?;
    io::write_json(&store.out_dir.join("grid.json"), &result.lines)?;
    Ok(result)
}

fn grid_csv(lines: &[GridLine]) -> String {
    let mut out = String::from("row,model,corpus,f1,intent,wer,alignment_error\n");
    for line in lines {
        match &line.record {
            Some(r) => {
                let align = r
                    .alignment_error
                    .map(|a| format!("{:.4}", a.entity_error_rate))
                    .unwrap_or_default();
                out.push_str(&format!(
                    "{},{},{},{:.4},{:.4},{:.4},{}\n",
                    r.row,
                    r.family,
                    r.corpus_variant,
                    r.metrics.slots.f1,
                    r.metrics.intent_accuracy,
                    r.metrics.wer,
                    align
                ));
            }
            None => {
                out.push_str(&format!(
                    "{},{},{},error,error,error,{}\n",
                    line.row,
                    line.family,
                    line.corpus_variant,
                    line.error.as_deref().unwrap_or("unknown").replace(',', ";")
                ));
            }
        }
    }
    out
}

/// The default clean grid: every row for both families.
pub fn default_grid(variant: CorpusVariant) -> Vec<ExperimentSpec> {
    let mut specs = Vec::new();
    for family in [ModelFamily::Rnnt, ModelFamily::Attn] {
        for row in ALL_ROWS {
            specs.push(ExperimentSpec {
                row,
                family,
                corpus_variant: variant,
            });
        }
    }
    specs
}

/// Human-readable mapping from grid rows to their semantics.
pub fn explain_rows() -> String {
    let mut out = String::new();
    for row in ALL_ROWS {
        out.push_str(&format!("{:>9}  {}\n", row.id(), row.describe()));
    }
    out.push_str("\nRecipes:\n");
    out.push_str("  1/2/3: one training phase on the named ground-truth variant\n");
    out.push_str("  4:     pretrain on per-epoch random order, finetune on alphabetic\n");
    out.push_str("  4-control: both phases on alphabetic (matched budget control)\n");
    out.push_str("  5:     one phase on keyword-HMM estimated spoken order\n");
    out.push_str("  6:     one phase on attention-alignment estimated spoken order\n");
    out.push_str("         (aligner = attention-family row 3 model, same corpus)\n");
    out.push_str("  7:     pretrain on random order, finetune on row-6 targets\n");
    out
}
