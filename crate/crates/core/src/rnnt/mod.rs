//! Compact RNN transducer: bidirectional recurrent transcription network,
//! unidirectional recurrent prediction network and a multiplicative joint
//! (project both embeddings to the joint space, multiply elementwise, tanh,
//! project to logits, log-softmax).

pub mod loss;

pub use loss::{rnnt_loss, Lattice, RnntLossResult};

use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Result, SluError};
use crate::nn::{
    finite_diff_check, sample_coords, BiLstmEncoder, GradCheckReport, Graph, LstmCell, NodeId,
    OptimizerKind, ParamGrads, ParamSet, Tensor,
};
use crate::rng::stream;
use crate::training::{
    check_vocab_prefix, copy_overlap, train_loop, InitFrom, TargetProvider, TrainOptions,
};
use crate::vocab::{Vocab, BLANK_ID, SOS_ID};

const TAG_INIT: u64 = 7;
const TAG_GRADCHECK: u64 = 8;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RnntConfig {
    pub frame_dim: usize,
    #[serde(default = "d_enc_layers")]
    pub encoder_layers: usize,
    #[serde(default = "d_enc_units")]
    pub encoder_units: usize,
    #[serde(default = "d_pred_units")]
    pub pred_units: usize,
    #[serde(default = "d_joint_dim")]
    pub joint_dim: usize,
    #[serde(default = "d_embed_dim")]
    pub embed_dim: usize,
    /// Full vocab size including BLANK.
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
    #[serde(default = "d_max_symbols")]
    pub max_symbols_per_frame: usize,
    pub seed: u64,
}

fn d_enc_layers() -> usize {
    2
}
fn d_enc_units() -> usize {
    48
}
fn d_pred_units() -> usize {
    64
}
fn d_joint_dim() -> usize {
    32
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
fn d_max_symbols() -> usize {
    4
}

impl RnntConfig {
    pub fn new(frame_dim: usize, vocab_size: usize, seed: u64) -> Self {
        RnntConfig {
            frame_dim,
            encoder_layers: d_enc_layers(),
            encoder_units: d_enc_units(),
            pred_units: d_pred_units(),
            joint_dim: d_joint_dim(),
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
            max_symbols_per_frame: d_max_symbols(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("frame_dim", self.frame_dim),
            ("encoder_layers", self.encoder_layers),
            ("encoder_units", self.encoder_units),
            ("pred_units", self.pred_units),
            ("joint_dim", self.joint_dim),
            ("embed_dim", self.embed_dim),
            ("max_symbols_per_frame", self.max_symbols_per_frame),
        ] {
            if v < 1 {
                return Err(SluError::validation(name, "must be at least 1"));
            }
        }
        if self.vocab_size <= BLANK_ID as usize {
            return Err(SluError::validation("vocab_size", "must include BLANK"));
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

/// Parameter handles; the tensors live in the model's ParamSet.
#[derive(Clone, Debug)]
struct RnntArch {
    encoder: BiLstmEncoder,
    embed: usize,
    pred: LstmCell,
    enc_proj: usize,
    pred_proj: usize,
    out_w: usize,
    out_b: usize,
}

pub struct RnntModel {
    pub config: RnntConfig,
    pub vocab: Vocab,
    pub params: ParamSet,
    arch: RnntArch,
}

impl RnntArch {
    fn build(config: &RnntConfig, params: &mut ParamSet, rng: &mut ChaCha12Rng) -> Self {
        let encoder = BiLstmEncoder::register(
            params,
            "enc",
            config.frame_dim,
            config.encoder_units,
            config.encoder_layers,
            rng,
        );
        let embed = params.add(
            "embed",
            crate::nn::xavier(config.vocab_size, config.embed_dim, rng),
        );
        let pred = LstmCell::register(params, "pred", config.embed_dim, config.pred_units, rng);
        let enc_proj = params.add(
            "joint.enc_proj",
            crate::nn::xavier(2 * config.encoder_units, config.joint_dim, rng),
        );
        let pred_proj = params.add(
            "joint.pred_proj",
            crate::nn::xavier(config.pred_units, config.joint_dim, rng),
        );
        let out_w = params.add(
            "joint.out_w",
            crate::nn::xavier(config.joint_dim, config.vocab_size, rng),
        );
        // Bias the joint toward BLANK at initialization: most lattice steps
        // are frame advances, and a flat start stalls early credit
        // assignment between emissions and blanks.
        let mut out_bias = Tensor::zeros(1, config.vocab_size);
        out_bias.data[BLANK_ID as usize] = 2.0;
        let out_b = params.add("joint.out_b", out_bias);
        RnntArch {
            encoder,
            embed,
            pred,
            enc_proj,
            pred_proj,
            out_w,
            out_b,
        }
    }

    fn check_targets(&self, config: &RnntConfig, targets: &[u32]) -> Result<()> {
        for &y in targets {
            if y == BLANK_ID {
                return Err(SluError::validation("targets", "BLANK in target sequence"));
            }
            if y as usize >= config.vocab_size {
                return Err(SluError::validation(
                    "targets",
                    format!("symbol {y} outside vocab of size {}", config.vocab_size),
                ));
            }
        }
        Ok(())
    }

    /// Build the full lattice of per-(t,u) log-distributions on the tape.
    fn lattice_nodes(
        &self,
        config: &RnntConfig,
        g: &mut Graph<'_>,
        frames: &Tensor,
        targets: &[u32],
        mut dropout_rng: Option<&mut ChaCha12Rng>,
    ) -> Result<Vec<NodeId>> {
        if frames.rows == 0 {
            return Err(SluError::validation("frames", "empty frame matrix"));
        }
        self.check_targets(config, targets)?;
        let frames_node = g.constant(frames.clone());
        let enc = self.encoder.forward(
            g,
            frames_node,
            dropout_rng
                .as_deref_mut()
                .map(|r| (config.dropout, r))
                .filter(|(d, _)| *d > 0.0),
        );
        let enc_proj_w = g.param(self.enc_proj);
        let enc_proj = g.matmul(enc, enc_proj_w);
        let pred_proj_w = g.param(self.pred_proj);

        let (mut h, mut c) = self.pred.zero_state(g);
        let mut pred_rows = Vec::with_capacity(targets.len() + 1);
        for u in 0..=targets.len() {
            let sym = if u == 0 { BLANK_ID } else { targets[u - 1] };
            let e = g.embed_row(self.embed, sym as usize);
            let (h2, c2) = self.pred.step(g, e, h, c);
            h = h2;
            c = c2;
            pred_rows.push(g.matmul(h, pred_proj_w));
        }
        let pred_mat = g.stack_rows(pred_rows);

        // One fused (U+1) x V block per frame keeps the tape small.
        let out_w = g.param(self.out_w);
        let out_b = g.param(self.out_b);
        let mut nodes = Vec::with_capacity(frames.rows);
        for t in 0..frames.rows {
            let enc_row = g.row_slice(enc_proj, t);
            let prod = g.mul_row(pred_mat, enc_row);
            let th = g.tanh(prod);
            let logits = g.matmul(th, out_w);
            let logits = g.add_row(logits, out_b);
            nodes.push(g.log_softmax_row(logits));
        }
        Ok(nodes)
    }

    fn utterance_nll(
        &self,
        config: &RnntConfig,
        params: &ParamSet,
        frames: &Tensor,
        targets: &[u32],
    ) -> Result<f64> {
        let mut g = Graph::new(params);
        let nodes = self.lattice_nodes(config, &mut g, frames, targets, None)?;
        let lattice = collect_lattice(&g, &nodes, frames.rows, targets.len() + 1, config.vocab_size)?;
        Ok(rnnt_loss(&lattice, targets, BLANK_ID)?.nll)
    }

    fn utterance_grad(
        &self,
        config: &RnntConfig,
        params: &ParamSet,
        frames: &Tensor,
        targets: &[u32],
        mut dropout_rng: Option<&mut ChaCha12Rng>,
    ) -> Result<(f64, ParamGrads)> {
        let mut g = Graph::new(params);
        let nodes = self.lattice_nodes(
            config,
            &mut g,
            frames,
            targets,
            dropout_rng.as_deref_mut(),
        )?;
        let lattice = collect_lattice(&g, &nodes, frames.rows, targets.len() + 1, config.vocab_size)?;
        let res = rnnt_loss(&lattice, targets, BLANK_ID)?;
        let v = config.vocab_size;
        let block = (targets.len() + 1) * v;
        let seeds: Vec<(NodeId, Tensor)> = nodes
            .iter()
            .enumerate()
            .map(|(t, id)| {
                (
                    *id,
                    Tensor::from_vec(
                        targets.len() + 1,
                        v,
                        res.grad[t * block..(t + 1) * block].to_vec(),
                    ),
                )
            })
            .collect();
        let grads = g.backward_seeded(&seeds);
        Ok((res.nll, grads))
    }
}

fn collect_lattice(
    g: &Graph<'_>,
    nodes: &[NodeId],
    t_len: usize,
    u_len: usize,
    vocab: usize,
) -> Result<Lattice> {
    // One node per frame holding the (U+1) x V block.
    let mut log_probs = Vec::with_capacity(t_len * u_len * vocab);
    for id in nodes {
        let v = g.value(*id);
        debug_assert_eq!(v.rows, u_len);
        debug_assert_eq!(v.cols, vocab);
        log_probs.extend_from_slice(&v.data);
    }
    Lattice::new(t_len, u_len, vocab, log_probs)
}

impl RnntModel {
    pub fn new(config: RnntConfig, vocab: Vocab) -> Result<Self> {
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
        let arch = RnntArch::build(&config, &mut params, &mut rng);
        Ok(RnntModel {
            config,
            vocab,
            params,
            arch,
        })
    }

    /// Warm start: copy every shared tensor from `src`; rows/columns for new
    /// vocab symbols keep their fresh random initialization.
    pub fn from_model(src: &RnntModel, config: RnntConfig, vocab: Vocab) -> Result<Self> {
        check_vocab_prefix(&src.vocab, &vocab)?;
        let mut fresh = RnntModel::new(config, vocab)?;
        for (name, dims) in [
            ("encoder_layers", (src.config.encoder_layers, fresh.config.encoder_layers)),
            ("encoder_units", (src.config.encoder_units, fresh.config.encoder_units)),
            ("pred_units", (src.config.pred_units, fresh.config.pred_units)),
            ("joint_dim", (src.config.joint_dim, fresh.config.joint_dim)),
            ("embed_dim", (src.config.embed_dim, fresh.config.embed_dim)),
            ("frame_dim", (src.config.frame_dim, fresh.config.frame_dim)),
        ] {
            if dims.0 != dims.1 {
                return Err(SluError::VocabMismatch(format!(
                    "{name} differs between source and target model"
                )));
            }
        }
        for (_, entry) in src.params.iter() {
            let dst_idx = fresh.params.index_of(&entry.name).ok_or_else(|| {
                SluError::VocabMismatch(format!("parameter {} missing in target", entry.name))
            })?;
            copy_overlap(&entry.tensor, fresh.params.tensor_mut(dst_idx));
        }
        Ok(fresh)
    }

    /// Log-distribution over vocab+BLANK from raw encoder/prediction
    /// embeddings.
    pub fn joint(&self, enc_embedding: &[f64], pred_embedding: &[f64]) -> Result<Vec<f64>> {
        let logits = self.joint_logits(enc_embedding, pred_embedding)?;
        let lse = crate::nn::log_sum_exp(&logits);
        Ok(logits.into_iter().map(|l| l - lse).collect())
    }

    /// Pre-softmax joint logits.
    pub fn joint_logits(&self, enc_embedding: &[f64], pred_embedding: &[f64]) -> Result<Vec<f64>> {
        let enc_w = self.params.tensor(self.arch.enc_proj);
        let pred_w = self.params.tensor(self.arch.pred_proj);
        if enc_embedding.len() != enc_w.rows || pred_embedding.len() != pred_w.rows {
            return Err(SluError::validation(
                "embeddings",
                format!(
                    "expected dims {} and {}, got {} and {}",
                    enc_w.rows,
                    pred_w.rows,
                    enc_embedding.len(),
                    pred_embedding.len()
                ),
            ));
        }
        let e = Tensor::row_vec(enc_embedding.to_vec()).matmul(enc_w);
        let p = Tensor::row_vec(pred_embedding.to_vec()).matmul(pred_w);
        let mut joint = Tensor::zeros(1, self.config.joint_dim);
        for i in 0..self.config.joint_dim {
            joint.data[i] = (e.data[i] * p.data[i]).tanh();
        }
        let out_w = self.params.tensor(self.arch.out_w);
        let out_b = self.params.tensor(self.arch.out_b);
        let mut logits = joint.matmul(out_w);
        logits.add_assign(out_b);
        Ok(logits.data)
    }

    /// Full lattice of log-distributions for inspection and loss computation.
    pub fn lattice(&self, frames: &Tensor, targets: &[u32]) -> Result<Lattice> {
        let mut g = Graph::new(&self.params);
        let nodes = self
            .arch
            .lattice_nodes(&self.config, &mut g, frames, targets, None)?;
        collect_lattice(
            &g,
            &nodes,
            frames.rows,
            targets.len() + 1,
            self.config.vocab_size,
        )
    }

    pub fn utterance_nll(&self, frames: &Tensor, targets: &[u32]) -> Result<f64> {
        self.arch
            .utterance_nll(&self.config, &self.params, frames, targets)
    }

    pub fn utterance_grad(&self, frames: &Tensor, targets: &[u32]) -> Result<(f64, ParamGrads)> {
        self.arch
            .utterance_grad(&self.config, &self.params, frames, targets, None)
    }

    /// Greedy decoding: per frame, emit argmax symbols until BLANK or the
    /// per-frame cap, then advance. The output never contains BLANK; the
    /// start symbol is masked since it never occurs in targets.
    pub fn greedy_decode(&self, frames: &Tensor, max_symbols_per_frame: usize) -> Result<Vec<u32>> {
        if frames.rows == 0 {
            return Err(SluError::validation("frames", "empty frame matrix"));
        }
        let mut g = Graph::new(&self.params);
        let frames_node = g.constant(frames.clone());
        let enc = self.arch.encoder.forward(&mut g, frames_node, None);
        let enc_proj_w = g.param(self.arch.enc_proj);
        let enc_proj = g.matmul(enc, enc_proj_w);
        let pred_proj_w = g.param(self.arch.pred_proj);
        let out_w = g.param(self.arch.out_w);
        let out_b = g.param(self.arch.out_b);

        let (mut h, mut c) = self.arch.pred.zero_state(&mut g);
        let e = g.embed_row(self.arch.embed, BLANK_ID as usize);
        let (h2, c2) = self.arch.pred.step(&mut g, e, h, c);
        h = h2;
        c = c2;
        let mut pred_row = g.matmul(h, pred_proj_w);

        let mut out = Vec::new();
        for t in 0..frames.rows {
            let enc_row = g.row_slice(enc_proj, t);
            let mut emitted = 0;
            loop {
                let prod = g.mul(enc_row, pred_row);
                let th = g.tanh(prod);
                let logits = g.matmul(th, out_w);
                let logits = g.add_row(logits, out_b);
                let row = g.value(logits);
                let mut best = BLANK_ID as usize;
                let mut best_v = f64::NEG_INFINITY;
                for (k, &v) in row.data.iter().enumerate() {
                    if k as u32 == SOS_ID {
                        continue;
                    }
                    if v > best_v {
                        best_v = v;
                        best = k;
                    }
                }
                if best as u32 == BLANK_ID || emitted >= max_symbols_per_frame {
                    break;
                }
                out.push(best as u32);
                emitted += 1;
                let e = g.embed_row(self.arch.embed, best);
                let (h2, c2) = self.arch.pred.step(&mut g, e, h, c);
                h = h2;
                c = c2;
                pred_row = g.matmul(h, pred_proj_w);
            }
        }
        Ok(out)
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
        for (frames, targets) in batch {
            let (_, g) = self
                .arch
                .utterance_grad(&self.config, &self.params, frames, targets, None)?;
            analytic.accumulate(&g);
        }
        let mut rng = stream(self.config.seed, &[TAG_GRADCHECK]);
        let coords = sample_coords(&self.params, n_coords.max(200), &mut rng);
        let arch = self.arch.clone();
        let config = self.config.clone();
        let report = finite_diff_check(&mut self.params, &coords, epsilon, &analytic, |ps| {
            batch
                .iter()
                .map(|(frames, targets)| {
                    arch.utterance_nll(&config, ps, frames, targets)
                        .expect("loss evaluation failed during finite differences")
                })
                .sum()
        });
        Ok(report)
    }
}

/// Train a transducer on the corpus with the given target provider.
pub fn train_rnnt(
    corpus: &Corpus,
    provider: &dyn TargetProvider,
    config: RnntConfig,
    init: InitFrom<'_, RnntModel>,
) -> Result<(RnntModel, Vec<f64>)> {
    let mut model = match init {
        InitFrom::Random => RnntModel::new(config, corpus.vocab.clone())?,
        InitFrom::Model(src) => RnntModel::from_model(src, config, corpus.vocab.clone())?,
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
    use crate::corpus::{generate_corpus, CorpusSpec};
    use crate::targets::{make_target, Variant};
    use crate::training::{FixedVariantProvider, InitFrom};

    fn tiny_config(vocab_size: usize, frame_dim: usize) -> RnntConfig {
        RnntConfig {
            encoder_layers: 1,
            encoder_units: 6,
            pred_units: 6,
            joint_dim: 5,
            embed_dim: 4,
            learning_rate: 1e-2,
            epochs_per_phase: 1,
            batch_size: 2,
            ..RnntConfig::new(frame_dim, vocab_size, 3)
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
    fn joint_zero_embedding_gives_bias_distribution() {
        let corpus = tiny_corpus(1, 0.05, 1);
        let cfg = tiny_config(corpus.vocab.size(), 6);
        let mut model = RnntModel::new(cfg, corpus.vocab.clone()).unwrap();
        // Distinctive bias so the check is meaningful.
        let b = model.arch.out_b;
        for (i, x) in model.params.tensor_mut(b).data.iter_mut().enumerate() {
            *x = i as f64 * 0.1;
        }
        let enc_dim = 2 * model.config.encoder_units;
        let zeros = vec![0.0; enc_dim];
        let pred = vec![0.7; model.config.pred_units];
        let logits = model.joint_logits(&zeros, &pred).unwrap();
        let bias = &model.params.tensor(model.arch.out_b).data;
        for (l, b) in logits.iter().zip(bias.iter()) {
            assert!((l - b).abs() < 1e-12);
        }
        let dist = model.joint(&zeros, &pred).unwrap();
        assert!(crate::nn::log_sum_exp(&dist).abs() < 1e-9);
    }

    #[test]
    fn joint_is_equivariant_under_output_permutation() {
        let corpus = tiny_corpus(1, 0.05, 2);
        let cfg = tiny_config(corpus.vocab.size(), 6);
        let model = RnntModel::new(cfg.clone(), corpus.vocab.clone()).unwrap();
        let enc = vec![0.3; 2 * cfg.encoder_units];
        let pred = vec![-0.2; cfg.pred_units];
        let base = model.joint(&enc, &pred).unwrap();

        // Reverse the output units: permute out_w columns and out_b entries.
        let mut permuted = RnntModel::new(cfg, corpus.vocab.clone()).unwrap();
        permuted.params = model.params.clone();
        let v = permuted.config.vocab_size;
        let w_idx = permuted.arch.out_w;
        let b_idx = permuted.arch.out_b;
        let w = permuted.params.tensor_mut(w_idx);
        for r in 0..w.rows {
            let row: Vec<f64> = w.row(r).iter().rev().cloned().collect();
            w.row_mut(r).copy_from_slice(&row);
        }
        let bt = permuted.params.tensor_mut(b_idx);
        bt.data.reverse();
        let out = permuted.joint(&enc, &pred).unwrap();
        for k in 0..v {
            assert!((out[k] - base[v - 1 - k]).abs() < 1e-12);
        }
    }

    #[test]
    fn lattice_distributions_are_normalized() {
        let corpus = tiny_corpus(2, 0.05, 3);
        let cfg = tiny_config(corpus.vocab.size(), 6);
        let model = RnntModel::new(cfg, corpus.vocab.clone()).unwrap();
        let utt = &corpus.utterances[0];
        let target = make_target(utt, &corpus.vocab, Variant::SpokenOrder, None).unwrap();
        let lat = model.lattice(&utt.frames, &target.symbols).unwrap();
        lat.check_normalized(1e-6).unwrap();
    }

    #[test]
    fn gradient_check_end_to_end() {
        let corpus = tiny_corpus(2, 0.05, 4);
        let cfg = tiny_config(corpus.vocab.size(), 6);
        let mut model = RnntModel::new(cfg, corpus.vocab.clone()).unwrap();
        let t0 = make_target(&corpus.utterances[0], &corpus.vocab, Variant::SpokenOrder, None)
            .unwrap();
        let batch = vec![(&corpus.utterances[0].frames, t0.symbols.as_slice())];
        let report = model.grad_check(&batch, 1e-5, 200).unwrap();
        assert!(
            report.max_rel_err < 1e-4,
            "max rel err {}",
            report.max_rel_err
        );
        let report2 = model.grad_check(&batch, 1e-5, 200).unwrap();
        assert_eq!(report.max_rel_err, report2.max_rel_err);
    }

    #[test]
    fn from_model_with_identical_vocab_preserves_loss() {
        let corpus = tiny_corpus(2, 0.05, 5);
        let cfg = tiny_config(corpus.vocab.size(), 6);
        let model = RnntModel::new(cfg.clone(), corpus.vocab.clone()).unwrap();
        let copy = RnntModel::from_model(&model, cfg, corpus.vocab.clone()).unwrap();
        let utt = &corpus.utterances[0];
        let t = make_target(utt, &corpus.vocab, Variant::SpokenOrder, None).unwrap();
        let a = model.utterance_nll(&utt.frames, &t.symbols).unwrap();
        let b = copy.utterance_nll(&utt.frames, &t.symbols).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn from_model_extended_vocab_preserves_old_joint_logits() {
        let corpus = tiny_corpus(2, 0.05, 6);
        let old_vocab = corpus.vocab.clone();
        let cfg = tiny_config(old_vocab.size(), 6);
        let model = RnntModel::new(cfg.clone(), old_vocab.clone()).unwrap();

        let mut intents: Vec<String> = old_vocab.intent_tokens().to_vec();
        intents.push("INTENT-brand_new".to_string());
        let extended = Vocab::new(
            old_vocab.spoken_tokens().to_vec(),
            old_vocab.label_tokens().to_vec(),
            intents,
        )
        .unwrap();
        // Extension appends intents at the end of the id space, so the old
        // vocab must remain a prefix.
        check_vocab_prefix(&old_vocab, &extended).unwrap();

        let mut cfg2 = cfg.clone();
        cfg2.vocab_size = extended.size();
        let ext = RnntModel::from_model(&model, cfg2, extended).unwrap();
        let enc = vec![0.25; 2 * cfg.encoder_units];
        let pred = vec![0.4; cfg.pred_units];
        let old_logits = model.joint_logits(&enc, &pred).unwrap();
        let new_logits = ext.joint_logits(&enc, &pred).unwrap();
        for k in 0..old_vocab.size() {
            assert_eq!(old_logits[k], new_logits[k]);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let corpus = tiny_corpus(6, 0.05, 7);
        let mut cfg = tiny_config(corpus.vocab.size(), 6);
        cfg.epochs_per_phase = 2;
        let p = FixedVariantProvider(Variant::SpokenOrder);
        let (_, t1) = train_rnnt(&corpus, &p, cfg.clone(), InitFrom::Random).unwrap();
        let (_, t2) = train_rnnt(&corpus, &p, cfg, InitFrom::Random).unwrap();
        assert_eq!(t1, t2);
    }

    #[test]
    fn single_utterance_overfit_and_exact_greedy_recovery() {
        let corpus_full = tiny_corpus(30, 0.0, 8);
        // Pick a short utterance to keep the test quick.
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
        cfg.encoder_units = 16;
        cfg.pred_units = 16;
        cfg.joint_dim = 24;
        cfg.embed_dim = 8;
        cfg.epochs_per_phase = 400;
        cfg.batch_size = 1;
        cfg.learning_rate = 3e-2;
        let p = FixedVariantProvider(Variant::SpokenOrder);
        let (model, trace) = train_rnnt(&corpus, &p, cfg, InitFrom::Random).unwrap();
        let final_loss = *trace.last().unwrap();
        assert!(final_loss < 0.05, "overfit loss {final_loss}");

        let utt = &corpus.utterances[0];
        let target = make_target(utt, &corpus.vocab, Variant::SpokenOrder, None).unwrap();
        let decoded = model
            .greedy_decode(&utt.frames, model.config.max_symbols_per_frame)
            .unwrap();
        assert_eq!(decoded, target.symbols);
        assert!(decoded.len() <= utt.frames.rows * model.config.max_symbols_per_frame);
        assert!(decoded.iter().all(|&s| s != BLANK_ID));
    }
}
