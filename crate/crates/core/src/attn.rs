//! Attention encoder-decoder: bidirectional recurrent encoder with a raw
//! feature skip connection, and a unidirectional decoder driven by
//! single-head additive location-aware attention (the score per frame blends
//! the decoder state, the encoder frame and a convolution over the previous
//! attention column).

use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Result, SluError};
use crate::nn::{
    finite_diff_check, sample_coords, xavier, BiLstmEncoder, GradCheckReport, Graph, LstmCell,
    NodeId, OptimizerKind, ParamGrads, ParamSet, Tensor,
};
use crate::rng::stream;
use crate::targets::TargetSequence;
use crate::training::{
    check_vocab_prefix, copy_overlap, train_loop, InitFrom, TargetProvider, TrainOptions,
};
use crate::vocab::{SymbolKind, Vocab, BLANK_ID, SOS_ID};

const TAG_INIT: u64 = 9;
const TAG_GRADCHECK: u64 = 10;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttnConfig {
    pub frame_dim: usize,
    #[serde(default = "d_enc_layers")]
    pub encoder_layers: usize,
    #[serde(default = "d_enc_units")]
    pub encoder_units: usize,
    #[serde(default = "d_dec_units")]
    pub decoder_units: usize,
    #[serde(default = "d_attn_dim")]
    pub attention_dim: usize,
    #[serde(default = "d_conv_width")]
    pub location_conv_width: usize,
    #[serde(default = "d_conv_filters")]
    pub location_conv_filters: usize,
    #[serde(default = "d_embed_dim")]
    pub embed_dim: usize,
    pub vocab_size: usize,
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub lr_final: Option<f64>,
    #[serde(default = "d_epochs")]
    pub epochs_per_phase: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_optimizer")]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default = "d_clip")]
    pub clip_norm: f64,
    #[serde(default)]
    pub dropout: f64,
    pub seed: u64,
}

fn d_enc_layers() -> usize {
    2
}
fn d_enc_units() -> usize {
    48
}
fn d_dec_units() -> usize {
    64
}
fn d_attn_dim() -> usize {
    32
}
fn d_conv_width() -> usize {
    7
}
fn d_conv_filters() -> usize {
    8
}
fn d_embed_dim() -> usize {
    16
}
fn d_lr() -> f64 {
    3e-3
}
fn d_epochs() -> usize {
    15
}
fn d_batch() -> usize {
    8
}
fn d_optimizer() -> OptimizerKind {
    OptimizerKind::Adam
}
fn d_clip() -> f64 {
    5.0
}

impl AttnConfig {
    pub fn new(frame_dim: usize, vocab_size: usize, seed: u64) -> Self {
        AttnConfig {
            frame_dim,
            encoder_layers: d_enc_layers(),
            encoder_units: d_enc_units(),
            decoder_units: d_dec_units(),
            attention_dim: d_attn_dim(),
            location_conv_width: d_conv_width(),
            location_conv_filters: d_conv_filters(),
            embed_dim: d_embed_dim(),
            vocab_size,
            learning_rate: d_lr(),
            lr_final: None,
            epochs_per_phase: d_epochs(),
            batch_size: d_batch(),
            optimizer: d_optimizer(),
            momentum: 0.0,
            clip_norm: d_clip(),
            dropout: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("frame_dim", self.frame_dim),
            ("encoder_layers", self.encoder_layers),
            ("encoder_units", self.encoder_units),
            ("decoder_units", self.decoder_units),
            ("attention_dim", self.attention_dim),
            ("location_conv_width", self.location_conv_width),
            ("location_conv_filters", self.location_conv_filters),
            ("embed_dim", self.embed_dim),
            ("vocab_size", self.vocab_size),
        ] {
            if v < 1 {
                return Err(SluError::validation(name, "must be at least 1"));
            }
        }
        if !(self.dropout >= 0.0 && self.dropout < 1.0) {
            return Err(SluError::validation("dropout", "must lie in [0, 1)"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(SluError::validation("learning_rate", "must be positive"));
        }
        Ok(())
    }

    fn train_options(&self) -> TrainOptions {
        TrainOptions {
            epochs: self.epochs_per_phase,
            batch_size: self.batch_size,
            seed: self.seed,
            optimizer: self.optimizer,
            learning_rate: self.learning_rate,
            lr_final: self.lr_final,
            momentum: self.momentum,
            clip_norm: self.clip_norm,
        }
    }
}

/// Attention weights alpha[t][n]: weight of output step n on frame t.
/// Every column is a distribution over frames.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttentionMatrix {
    pub t_len: usize,
    pub n_len: usize,
    /// Row-major [t][n].
    pub data: Vec<f64>,
}

impl AttentionMatrix {
    #[inline]
    pub fn at(&self, t: usize, n: usize) -> f64 {
        self.data[t * self.n_len + n]
    }

    pub fn column(&self, n: usize) -> Vec<f64> {
        (0..self.t_len).map(|t| self.at(t, n)).collect()
    }

    /// Columns must be non-negative and sum to one.
    pub fn check_normalized(&self, tol: f64) -> Result<()> {
        for n in 0..self.n_len {
            let mut sum = 0.0;
            for t in 0..self.t_len {
                let a = self.at(t, n);
                if a < 0.0 {
                    return Err(SluError::Numerical(format!(
                        "negative attention weight at ({t},{n})"
                    )));
                }
                sum += a;
            }
            if (sum - 1.0).abs() > tol {
                return Err(SluError::Numerical(format!(
                    "attention column {n} sums to {sum}"
                )));
            }
        }
        Ok(())
    }

    fn from_columns(t_len: usize, cols: &[Vec<f64>]) -> Self {
        let n_len = cols.len();
        let mut data = vec![0.0; t_len * n_len];
        for (n, col) in cols.iter().enumerate() {
            for t in 0..t_len {
                data[t * n_len + n] = col[t];
            }
        }
        AttentionMatrix { t_len, n_len, data }
    }
}

#[derive(Clone, Debug)]
struct AttnArch {
    encoder: BiLstmEncoder,
    embed: usize,
    dec: LstmCell,
    w_query: usize,
    w_enc: usize,
    w_loc: usize,
    attn_b: usize,
    v: usize,
    conv: usize,
    out_w: usize,
    out_b: usize,
}

pub struct AttnModel {
    pub config: AttnConfig,
    pub vocab: Vocab,
    pub params: ParamSet,
    arch: AttnArch,
}

/// Rolling decoder state on the tape.
struct DecState {
    h: NodeId,
    c: NodeId,
    prev_alpha: NodeId,
}

impl AttnArch {
    fn build(config: &AttnConfig, params: &mut ParamSet, rng: &mut ChaCha12Rng) -> Self {
        let encoder = BiLstmEncoder::register(
            params,
            "enc",
            config.frame_dim,
            config.encoder_units,
            config.encoder_layers,
            rng,
        );
        // Encoder output is the recurrent features with the raw frame
        // appended, so attended context carries the local content verbatim.
        let enc_out = 2 * config.encoder_units + config.frame_dim;
        let embed = params.add("embed", xavier(config.vocab_size, config.embed_dim, rng));
        let dec = LstmCell::register(
            params,
            "dec",
            config.embed_dim + enc_out,
            config.decoder_units,
            rng,
        );
        let w_query = params.add(
            "attn.w_query",
            xavier(config.decoder_units, config.attention_dim, rng),
        );
        let w_enc = params.add("attn.w_enc", xavier(enc_out, config.attention_dim, rng));
        let w_loc = params.add(
            "attn.w_loc",
            xavier(config.location_conv_filters, config.attention_dim, rng),
        );
        let attn_b = params.add("attn.bias", Tensor::zeros(1, config.attention_dim));
        let v = params.add("attn.v", xavier(config.attention_dim, 1, rng));
        let conv = params.add(
            "attn.conv",
            xavier(
                config.location_conv_filters,
                config.location_conv_width,
                rng,
            ),
        );
        let out_w = params.add(
            "out_w",
            xavier(config.decoder_units + enc_out, config.vocab_size, rng),
        );
        let out_b = params.add("out_b", Tensor::zeros(1, config.vocab_size));
        AttnArch {
            encoder,
            embed,
            dec,
            w_query,
            w_enc,
            w_loc,
            attn_b,
            v,
            conv,
            out_w,
            out_b,
        }
    }

    /// Encode frames and precompute the per-frame attention keys.
    fn encode(
        &self,
        config: &AttnConfig,
        g: &mut Graph<'_>,
        frames: &Tensor,
        mut dropout_rng: Option<&mut ChaCha12Rng>,
    ) -> Result<(NodeId, NodeId)> {
        if frames.rows == 0 {
            return Err(SluError::validation("frames", "empty frame matrix"));
        }
        let frames_node = g.constant(frames.clone());
        let rec = self.encoder.forward(
            g,
            frames_node,
            dropout_rng
                .as_deref_mut()
                .map(|r| (config.dropout, r))
                .filter(|(d, _)| *d > 0.0),
        );
        let enc = g.concat_cols(rec, frames_node);
        let w_enc = g.param(self.w_enc);
        let key = g.matmul(enc, w_enc);
        Ok((enc, key))
    }

    fn init_state(&self, g: &mut Graph<'_>, t_len: usize) -> DecState {
        let (h, c) = self.dec.zero_state(g);
        let uniform = g.constant(Tensor::col_vec(vec![1.0 / t_len as f64; t_len]));
        DecState {
            h,
            c,
            prev_alpha: uniform,
        }
    }

    /// One decoder step conditioned on the previously emitted symbol.
    /// Returns (next state, log-softmax row, attention column).
    fn dec_step(
        &self,
        g: &mut Graph<'_>,
        enc: NodeId,
        key: NodeId,
        state: DecState,
        prev_symbol: u32,
    ) -> (DecState, NodeId, NodeId) {
        let conv_k = g.param(self.conv);
        let loc_feat = g.conv1d_same(state.prev_alpha, conv_k);
        let w_loc = g.param(self.w_loc);
        let loc = g.matmul(loc_feat, w_loc);
        let w_query = g.param(self.w_query);
        let q = g.matmul(state.h, w_query);
        let attn_b = g.param(self.attn_b);
        let qb = g.add(q, attn_b);
        let key_loc = g.add(key, loc);
        let pre = g.add_row(key_loc, qb);
        let th = g.tanh(pre);
        let v = g.param(self.v);
        let scores = g.matmul(th, v);
        let alpha = g.softmax_col(scores);
        let alpha_row = g.transpose(alpha);
        let context = g.matmul(alpha_row, enc);

        let e = g.embed_row(self.embed, prev_symbol as usize);
        let x = g.concat_cols(e, context);
        let (h, c) = self.dec.step(g, x, state.h, state.c);

        let readout = g.concat_cols(h, context);
        let out_w = g.param(self.out_w);
        let out_b = g.param(self.out_b);
        let logits = g.matmul(readout, out_w);
        let logits = g.add_row(logits, out_b);
        let lsm = g.log_softmax_row(logits);
        (
            DecState {
                h,
                c,
                prev_alpha: alpha,
            },
            lsm,
            alpha,
        )
    }

    fn check_symbols(&self, config: &AttnConfig, symbols: &[u32]) -> Result<()> {
        for &s in symbols {
            if s as usize >= config.vocab_size {
                return Err(SluError::validation(
                    "symbols",
                    format!("symbol {s} outside vocab of size {}", config.vocab_size),
                ));
            }
        }
        Ok(())
    }

    /// Teacher-forced pass; returns per-step log-softmax rows and attention
    /// columns, one per target symbol.
    fn forced_pass(
        &self,
        config: &AttnConfig,
        g: &mut Graph<'_>,
        frames: &Tensor,
        symbols: &[u32],
        dropout_rng: Option<&mut ChaCha12Rng>,
    ) -> Result<(Vec<NodeId>, Vec<NodeId>)> {
        if symbols.is_empty() {
            return Err(SluError::validation("symbols", "empty target sequence"));
        }
        self.check_symbols(config, symbols)?;
        let (enc, key) = self.encode(config, g, frames, dropout_rng)?;
        let mut state = self.init_state(g, frames.rows);
        let mut lsms = Vec::with_capacity(symbols.len());
        let mut alphas = Vec::with_capacity(symbols.len());
        for n in 0..symbols.len() {
            let prev = if n == 0 { SOS_ID } else { symbols[n - 1] };
            let (next, lsm, alpha) = self.dec_step(g, enc, key, state, prev);
            state = next;
            lsms.push(lsm);
            alphas.push(alpha);
        }
        Ok((lsms, alphas))
    }

    /// Mean per-symbol teacher-forced cross-entropy.
    fn utterance_loss_node(
        &self,
        config: &AttnConfig,
        g: &mut Graph<'_>,
        frames: &Tensor,
        symbols: &[u32],
        dropout_rng: Option<&mut ChaCha12Rng>,
    ) -> Result<NodeId> {
        let (lsms, _) = self.forced_pass(config, g, frames, symbols, dropout_rng)?;
        let picks: Vec<NodeId> = lsms
            .iter()
            .zip(symbols.iter())
            .map(|(lsm, &y)| g.neg_pick(*lsm, y as usize))
            .collect();
        let total = g.sum_list(picks);
        Ok(g.scale(total, 1.0 / symbols.len() as f64))
    }

    fn utterance_nll(
        &self,
        config: &AttnConfig,
        params: &ParamSet,
        frames: &Tensor,
        symbols: &[u32],
    ) -> Result<f64> {
        let mut g = Graph::new(params);
        let loss = self.utterance_loss_node(config, &mut g, frames, symbols, None)?;
        Ok(g.value(loss).scalar())
    }

    fn utterance_grad(
        &self,
        config: &AttnConfig,
        params: &ParamSet,
        frames: &Tensor,
        symbols: &[u32],
        dropout_rng: Option<&mut ChaCha12Rng>,
    ) -> Result<(f64, ParamGrads)> {
        let mut g = Graph::new(params);
        let loss = self.utterance_loss_node(config, &mut g, frames, symbols, dropout_rng)?;
        let grads = g.backward(loss);
        Ok((g.value(loss).scalar(), grads))
    }
}

/// Greedy decode result; `truncated` is set when max_len was reached without
/// an intent token.
#[derive(Clone, Debug)]
pub struct DecodeOutput {
    pub symbols: Vec<u32>,
    pub attention: AttentionMatrix,
    pub truncated: bool,
}

impl AttnModel {
    pub fn new(config: AttnConfig, vocab: Vocab) -> Result<Self> {
        config.validate()?;
        if config.vocab_size != vocab.size() {
            return Err(SluError::VocabMismatch(format!(
                "config vocab_size {} != vocab size {}",
                config.vocab_size,
                vocab.size()
            )));
        }
        let mut params = ParamSet::new();
        let mut rng = stream(config.seed, &[TAG_INIT]);
        let arch = AttnArch::build(&config, &mut params, &mut rng);
        Ok(AttnModel {
            config,
            vocab,
            params,
            arch,
        })
    }

    /// Warm start from another model; new vocab rows/columns keep their fresh
    /// random initialization.
    pub fn from_model(src: &AttnModel, config: AttnConfig, vocab: Vocab) -> Result<Self> {
        check_vocab_prefix(&src.vocab, &vocab)?;
        for (name, dims) in [
            ("encoder_layers", (src.config.encoder_layers, config.encoder_layers)),
            ("encoder_units", (src.config.encoder_units, config.encoder_units)),
            ("decoder_units", (src.config.decoder_units, config.decoder_units)),
            ("attention_dim", (src.config.attention_dim, config.attention_dim)),
            ("embed_dim", (src.config.embed_dim, config.embed_dim)),
            ("frame_dim", (src.config.frame_dim, config.frame_dim)),
        ] {
            if dims.0 != dims.1 {
                return Err(SluError::VocabMismatch(format!(
                    "{name} differs between source and target model"
                )));
            }
        }
        let mut fresh = AttnModel::new(config, vocab)?;
        for (_, entry) in src.params.iter() {
            let dst_idx = fresh.params.index_of(&entry.name).ok_or_else(|| {
                SluError::VocabMismatch(format!("parameter {} missing in target", entry.name))
            })?;
            copy_overlap(&entry.tensor, fresh.params.tensor_mut(dst_idx));
        }
        Ok(fresh)
    }

    pub fn utterance_nll(&self, frames: &Tensor, symbols: &[u32]) -> Result<f64> {
        self.arch
            .utterance_nll(&self.config, &self.params, frames, symbols)
    }

    pub fn utterance_grad(&self, frames: &Tensor, symbols: &[u32]) -> Result<(f64, ParamGrads)> {
        self.arch
            .utterance_grad(&self.config, &self.params, frames, symbols, None)
    }

    /// Teacher-forced attention matrix: one column per target symbol.
    pub fn forced_attention(&self, frames: &Tensor, target: &TargetSequence) -> Result<AttentionMatrix> {
        let mut g = Graph::new(&self.params);
        let (_, alphas) =
            self.arch
                .forced_pass(&self.config, &mut g, frames, &target.symbols, None)?;
        let cols: Vec<Vec<f64>> = alphas.iter().map(|a| g.value(*a).data.clone()).collect();
        let m = AttentionMatrix::from_columns(frames.rows, &cols);
        m.check_normalized(1e-6)?;
        Ok(m)
    }

    /// Greedy decoding until an intent token or `max_len` symbols.
    pub fn decode(&self, frames: &Tensor, max_len: usize) -> Result<DecodeOutput> {
        if frames.rows == 0 {
            return Err(SluError::validation("frames", "empty frame matrix"));
        }
        let mut g = Graph::new(&self.params);
        let (enc, key) = self.arch.encode(&self.config, &mut g, frames, None)?;
        let mut state = self.arch.init_state(&mut g, frames.rows);
        let mut symbols = Vec::new();
        let mut cols = Vec::new();
        let mut truncated = true;
        let mut prev = SOS_ID;
        for _ in 0..max_len {
            let (next, lsm, alpha) = self.arch.dec_step(&mut g, enc, key, state, prev);
            state = next;
            let row = g.value(lsm);
            let mut best = 0usize;
            let mut best_v = f64::NEG_INFINITY;
            for (k, &val) in row.data.iter().enumerate() {
                // Reserved symbols never appear in targets.
                if k as u32 == BLANK_ID || k as u32 == SOS_ID {
                    continue;
                }
                if val > best_v {
                    best_v = val;
                    best = k;
                }
            }
            let sym = best as u32;
            symbols.push(sym);
            cols.push(g.value(alpha).data.clone());
            if self.vocab.kind(sym) == SymbolKind::Intent {
                truncated = false;
                break;
            }
            prev = sym;
        }
        let attention = AttentionMatrix::from_columns(frames.rows, &cols);
        attention.check_normalized(1e-6)?;
        Ok(DecodeOutput {
            symbols,
            attention,
            truncated,
        })
    }

    /// Finite-difference audit of the full backward pass on a small batch.
    pub fn grad_check(
        &mut self,
        batch: &[(&Tensor, &[u32])],
        epsilon: f64,
        n_coords: usize,
    ) -> Result<GradCheckReport> {
        if !(1e-6..=1e-3).contains(&epsilon) {
            return Err(SluError::validation("epsilon", "must lie in [1e-6, 1e-3]"));
        }
        let mut analytic = ParamGrads::zeros(self.params.len());
        for (frames, symbols) in batch {
            let (_, g) =
                self.arch
                    .utterance_grad(&self.config, &self.params, frames, symbols, None)?;
            analytic.accumulate(&g);
        }
        let mut rng = stream(self.config.seed, &[TAG_GRADCHECK]);
        let coords = sample_coords(&self.params, n_coords.max(200), &mut rng);
        let arch = self.arch.clone();
        let config = self.config.clone();
        let report = finite_diff_check(&mut self.params, &coords, epsilon, &analytic, |ps| {
            batch
                .iter()
                .map(|(frames, symbols)| {
                    arch.utterance_nll(&config, ps, frames, symbols)
                        .expect("loss evaluation failed during finite differences")
                })
                .sum()
        });
        Ok(report)
    }
}

/// Train an attention model on the corpus with the given target provider.
pub fn train_attn(
    corpus: &Corpus,
    provider: &dyn TargetProvider,
    config: AttnConfig,
    init: InitFrom<'_, AttnModel>,
) -> Result<(AttnModel, Vec<f64>)> {
    let mut model = match init {
        InitFrom::Random => AttnModel::new(config, corpus.vocab.clone())?,
        InitFrom::Model(src) => AttnModel::from_model(src, config, corpus.vocab.clone())?,
    };
    let opts = model.config.train_options();
    let arch = model.arch.clone();
    let cfg = model.config.clone();
    let trace = train_loop(
        corpus,
        provider,
        &opts,
        &mut model.params,
        |ps, utt, target, mut drng| {
            let dropout = if cfg.dropout > 0.0 {
                Some(&mut drng)
            } else {
                None
            };
            arch.utterance_grad(&cfg, ps, &utt.frames, &target.symbols, dropout)
        },
    )?;
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, Corpus, CorpusSpec};
    use crate::targets::{make_target, Variant};
    use crate::training::FixedVariantProvider;

    fn tiny_config(vocab_size: usize, frame_dim: usize) -> AttnConfig {
        AttnConfig {
            encoder_layers: 1,
            encoder_units: 6,
            decoder_units: 8,
            attention_dim: 6,
            location_conv_filters: 3,
            location_conv_width: 5,
            embed_dim: 4,
            learning_rate: 1e-2,
            epochs_per_phase: 1,
            batch_size: 2,
            ..AttnConfig::new(frame_dim, vocab_size, 11)
        }
    }

    fn tiny_corpus(n: usize, sigma: f64, seed: u64) -> Corpus {
        let spec = CorpusSpec {
            noise_sigma: sigma,
            frame_dim: 6,
            frames_per_token_range: (2, 2),
            ..CorpusSpec::with_defaults(n, seed)
        };
        generate_corpus(&spec).unwrap()
    }

    #[test]
    fn gradient_check_end_to_end() {
        let corpus = tiny_corpus(2, 0.05, 31);
        let cfg = tiny_config(corpus.vocab.size(), 6);
        let mut model = AttnModel::new(cfg, corpus.vocab.clone()).unwrap();
        let t0 = make_target(&corpus.utterances[0], &corpus.vocab, Variant::AlphabeticOrder, None)
            .unwrap();
        let batch = vec![(&corpus.utterances[0].frames, t0.symbols.as_slice())];
        let report = model.grad_check(&batch, 1e-5, 200).unwrap();
        assert!(
            report.max_rel_err < 1e-4,
            "max rel err {}",
            report.max_rel_err
        );
        let again = model.grad_check(&batch, 1e-5, 200).unwrap();
        assert_eq!(report.max_rel_err, again.max_rel_err);
    }

    #[test]
    fn grad_check_rejects_bad_epsilon() {
        let corpus = tiny_corpus(1, 0.05, 32);
        let cfg = tiny_config(corpus.vocab.size(), 6);
        let mut model = AttnModel::new(cfg, corpus.vocab.clone()).unwrap();
        let t0 = make_target(&corpus.utterances[0], &corpus.vocab, Variant::SpokenOrder, None)
            .unwrap();
        let batch = vec![(&corpus.utterances[0].frames, t0.symbols.as_slice())];
        assert!(model.grad_check(&batch, 1e-2, 200).is_err());
    }

    #[test]
    fn single_frame_input_gives_unit_attention_columns() {
        let corpus = tiny_corpus(1, 0.05, 33);
        let cfg = tiny_config(corpus.vocab.size(), 6);
        let model = AttnModel::new(cfg, corpus.vocab.clone()).unwrap();
        let frames = Tensor::from_vec(1, 6, vec![0.1; 6]);
        let out = model.decode(&frames, 5).unwrap();
        assert_eq!(out.attention.t_len, 1);
        for n in 0..out.attention.n_len {
            assert!((out.attention.at(0, n) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn decode_columns_normalized_and_truncation_flagged() {
        let corpus = tiny_corpus(2, 0.05, 34);
        let cfg = tiny_config(corpus.vocab.size(), 6);
        let model = AttnModel::new(cfg, corpus.vocab.clone()).unwrap();
        let utt = &corpus.utterances[0];
        let out = model.decode(&utt.frames, 4).unwrap();
        out.attention.check_normalized(1e-6).unwrap();
        assert_eq!(out.attention.n_len, out.symbols.len());
        // An untrained model almost surely fails to emit an intent in 4 steps.
        if out.truncated {
            assert_eq!(out.symbols.len(), 4);
        } else {
            assert!(matches!(
                corpus.vocab.kind(*out.symbols.last().unwrap()),
                SymbolKind::Intent
            ));
        }
    }

    #[test]
    fn forced_attention_has_one_column_per_symbol() {
        let corpus = tiny_corpus(2, 0.05, 35);
        let cfg = tiny_config(corpus.vocab.size(), 6);
        let model = AttnModel::new(cfg, corpus.vocab.clone()).unwrap();
        let utt = &corpus.utterances[1];
        let target = make_target(utt, &corpus.vocab, Variant::SpokenOrder, None).unwrap();
        let m = model.forced_attention(&utt.frames, &target).unwrap();
        assert_eq!(m.t_len, utt.frames.rows);
        assert_eq!(m.n_len, target.symbols.len());
        m.check_normalized(1e-6).unwrap();
        // Symbol outside vocab is rejected.
        let bad = TargetSequence {
            symbols: vec![corpus.vocab.size() as u32 + 5],
            variant: Variant::SpokenOrder,
        };
        assert!(model.forced_attention(&utt.frames, &bad).is_err());
    }

    #[test]
    fn from_model_identical_vocab_preserves_loss() {
        let corpus = tiny_corpus(2, 0.05, 36);
        let cfg = tiny_config(corpus.vocab.size(), 6);
        let model = AttnModel::new(cfg.clone(), corpus.vocab.clone()).unwrap();
        let copy = AttnModel::from_model(&model, cfg, corpus.vocab.clone()).unwrap();
        let utt = &corpus.utterances[0];
        let t = make_target(utt, &corpus.vocab, Variant::AlphabeticOrder, None).unwrap();
        assert_eq!(
            model.utterance_nll(&utt.frames, &t.symbols).unwrap(),
            copy.utterance_nll(&utt.frames, &t.symbols).unwrap()
        );
    }

    #[test]
    fn training_is_deterministic() {
        let corpus = tiny_corpus(6, 0.05, 37);
        let mut cfg = tiny_config(corpus.vocab.size(), 6);
        cfg.epochs_per_phase = 2;
        let p = FixedVariantProvider(Variant::AlphabeticOrder);
        let (_, t1) = train_attn(&corpus, &p, cfg.clone(), InitFrom::Random).unwrap();
        let (_, t2) = train_attn(&corpus, &p, cfg, InitFrom::Random).unwrap();
        assert_eq!(t1, t2);
    }

    #[test]
    fn plain_gradient_descent_trace_is_monotone_on_single_batch() {
        let corpus_full = tiny_corpus(10, 0.0, 38);
        let utt = corpus_full
            .utterances
            .iter()
            .min_by_key(|u| u.transcript.len())
            .unwrap()
            .clone();
        let corpus = Corpus {
            vocab: corpus_full.vocab.clone(),
            spec: corpus_full.spec.clone(),
            utterances: vec![utt],
        };
        let mut cfg = tiny_config(corpus.vocab.size(), 6);
        cfg.optimizer = OptimizerKind::Sgd;
        cfg.momentum = 0.0;
        cfg.learning_rate = 0.05;
        cfg.clip_norm = 0.0;
        cfg.epochs_per_phase = 120;
        cfg.batch_size = 1;
        let p = FixedVariantProvider(Variant::SpokenOrder);
        let (_, trace) = train_attn(&corpus, &p, cfg, InitFrom::Random).unwrap();
        for w in trace.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-12,
                "loss increased from {} to {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn memorization_reproduces_training_targets() {
        let spec = CorpusSpec {
            noise_sigma: 0.0,
            frame_dim: 8,
            frames_per_token_range: (2, 2),
            ..CorpusSpec::with_defaults(16, 39)
        };
        let corpus = generate_corpus(&spec).unwrap();
        let mut cfg = AttnConfig::new(8, corpus.vocab.size(), 12);
        cfg.encoder_layers = 1;
        cfg.encoder_units = 16;
        cfg.decoder_units = 32;
        cfg.attention_dim = 16;
        cfg.location_conv_filters = 4;
        cfg.embed_dim = 8;
        cfg.epochs_per_phase = 150;
        cfg.batch_size = 4;
        cfg.learning_rate = 1e-2;
        let p = FixedVariantProvider(Variant::AlphabeticOrder);
        let (model, trace) = train_attn(&corpus, &p, cfg, InitFrom::Random).unwrap();
        assert!(
            *trace.last().unwrap() < 0.01,
            "memorization loss {}",
            trace.last().unwrap()
        );
        for utt in &corpus.utterances {
            let target = make_target(utt, &corpus.vocab, Variant::AlphabeticOrder, None).unwrap();
            let out = model.decode(&utt.frames, 40).unwrap();
            assert_eq!(out.symbols, target.symbols, "utterance {}", utt.id);
            assert!(!out.truncated);
        }
    }
}
