//! Shared mini-batch training driver for both model families.
//!
//! Batches are computed in parallel but reduced in utterance order, so the
//! loss trace is bit-identical regardless of thread count.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::corpus::{Corpus, Utterance};
use crate::error::{Result, SluError};
use crate::nn::{clip_global_norm, Optimizer, OptimizerKind, ParamGrads, ParamSet};
use crate::rng::stream;
use crate::targets::{self, epoch_targets, make_target, Phase, TargetSequence, Variant};

const TAG_SHUFFLE: u64 = 5;
const TAG_DROPOUT: u64 = 6;

/// Supplies per-utterance targets for each training epoch.
pub trait TargetProvider: Sync {
    fn targets_for_epoch(&self, corpus: &Corpus, epoch: usize) -> Result<Vec<TargetSequence>>;
}

/// Same variant every epoch (full transcript, spoken or alphabetic order).
pub struct FixedVariantProvider(pub Variant);

impl TargetProvider for FixedVariantProvider {
    fn targets_for_epoch(&self, corpus: &Corpus, _epoch: usize) -> Result<Vec<TargetSequence>> {
        if self.0 == Variant::RandomOrder {
            return Err(SluError::validation(
                "variant",
                "random order needs RandomOrderProvider",
            ));
        }
        corpus
            .utterances
            .iter()
            .map(|u| make_target(u, &corpus.vocab, self.0, None))
            .collect()
    }
}

/// Fresh random phrase order per epoch: the set-based augmentation.
pub struct RandomOrderProvider {
    pub seed: u64,
}

impl TargetProvider for RandomOrderProvider {
    fn targets_for_epoch(&self, corpus: &Corpus, epoch: usize) -> Result<Vec<TargetSequence>> {
        epoch_targets(corpus, Phase::Pretrain, epoch, self.seed)
    }
}

/// Fixed precomputed targets (e.g. estimated spoken order from alignment),
/// one per utterance in corpus order.
pub struct PrecomputedProvider {
    pub targets: Vec<TargetSequence>,
}

impl TargetProvider for PrecomputedProvider {
    fn targets_for_epoch(&self, corpus: &Corpus, _epoch: usize) -> Result<Vec<TargetSequence>> {
        if self.targets.len() != corpus.len() {
            return Err(SluError::validation(
                "targets",
                format!(
                    "{} precomputed targets for {} utterances",
                    self.targets.len(),
                    corpus.len()
                ),
            ));
        }
        Ok(self.targets.clone())
    }
}

/// Model initialization for a training phase.
pub enum InitFrom<'a, M> {
    Random,
    Model(&'a M),
}

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    /// Geometric decay target; the per-epoch rate interpolates from
    /// `learning_rate` down to this value. None keeps the rate constant.
    pub lr_final: Option<f64>,
    pub momentum: f64,
    pub clip_norm: f64,
}

impl TrainOptions {
    fn epoch_lr(&self, epoch: usize) -> f64 {
        match self.lr_final {
            Some(lr1) if self.epochs > 1 => {
                let t = epoch as f64 / (self.epochs - 1) as f64;
                self.learning_rate * (lr1 / self.learning_rate).powf(t)
            }
            _ => self.learning_rate,
        }
    }
}

/// Run the epoch/batch loop. `grad_fn` maps (params, utterance, target,
/// dropout stream) to a loss and gradient; it must be pure given its inputs.
/// Returns the per-epoch mean loss trace.
pub fn train_loop<F>(
    corpus: &Corpus,
    provider: &dyn TargetProvider,
    opts: &TrainOptions,
    params: &mut ParamSet,
    grad_fn: F,
) -> Result<Vec<f64>>
where
    F: Fn(&ParamSet, &Utterance, &TargetSequence, ChaCha12Rng) -> Result<(f64, ParamGrads)> + Sync,
{
    if corpus.is_empty() {
        return Err(SluError::validation("corpus", "cannot train on an empty corpus"));
    }
    if opts.batch_size == 0 {
        return Err(SluError::validation("batch_size", "must be at least 1"));
    }
    let n = corpus.len();
    let mut optimizer = Optimizer::new(opts.optimizer, opts.learning_rate, opts.momentum, params.len());
    let mut trace = Vec::with_capacity(opts.epochs);

    for epoch in 0..opts.epochs {
        optimizer.set_lr(opts.epoch_lr(epoch));
        let targets = provider.targets_for_epoch(corpus, epoch)?;
        if targets.len() != n {
            return Err(SluError::validation(
                "targets",
                "provider returned wrong target count",
            ));
        }
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = stream(opts.seed, &[TAG_SHUFFLE, epoch as u64]);
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }

        let mut epoch_loss = 0.0;
        for chunk in order.chunks(opts.batch_size) {
            let results: Vec<Result<(f64, ParamGrads)>> = chunk
                .par_iter()
                .map(|&i| {
                    let drng = stream(opts.seed, &[TAG_DROPOUT, epoch as u64, i as u64]);
                    grad_fn(&*params, &corpus.utterances[i], &targets[i], drng)
                })
                .collect();
            let mut acc = ParamGrads::zeros(params.len());
            let mut batch_loss = 0.0;
            for r in results {
                let (loss, grads) = r?;
                batch_loss += loss;
                acc.accumulate(&grads);
            }
            if !batch_loss.is_finite() {
                return Err(SluError::Numerical(format!(
                    "loss diverged to {batch_loss} at epoch {epoch}"
                )));
            }
            acc.scale(1.0 / chunk.len() as f64);
            if !acc.is_finite() {
                return Err(SluError::Numerical(format!(
                    "non-finite gradient at epoch {epoch}"
                )));
            }
            clip_global_norm(&mut acc, opts.clip_norm);
            optimizer.step(params, &acc);
            epoch_loss += batch_loss;
        }
        if !params.all_finite() {
            return Err(SluError::Numerical(format!(
                "parameters became non-finite after epoch {epoch}"
            )));
        }
        trace.push(epoch_loss / n as f64);
    }
    Ok(trace)
}

/// Check that a source vocab occupies a prefix of the target vocab's id
/// space with identical tokens, as required for warm starts.
pub fn check_vocab_prefix(
    old: &crate::vocab::Vocab,
    new: &crate::vocab::Vocab,
) -> Result<()> {
    if old.size() > new.size() {
        return Err(SluError::VocabMismatch(
            "source vocab is larger than target vocab".to_string(),
        ));
    }
    for id in 0..old.size() as u32 {
        if old.token(id) != new.token(id) {
            return Err(SluError::VocabMismatch(format!(
                "token id {id}: `{}` vs `{}`",
                old.token(id),
                new.token(id)
            )));
        }
    }
    Ok(())
}

/// Copy the overlapping top-left block from `src` into `dst`. Used for warm
/// starts where a vocab extension appends rows/columns.
pub fn copy_overlap(src: &crate::nn::Tensor, dst: &mut crate::nn::Tensor) {
    let rows = src.rows.min(dst.rows);
    let cols = src.cols.min(dst.cols);
    for r in 0..rows {
        dst.row_mut(r)[..cols].copy_from_slice(&src.row(r)[..cols]);
    }
}

pub use targets::Variant as TargetVariant;
