//! Masked-language-model transformer: pretraining on claim sequences and
//! fine-tuning a `[CLS]` classification head.

mod layout;
mod network;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use layout::{Architecture, BlockLayout, Layout, Section};
pub use network::{check_ids, cls_logit, forward, loss_and_grad, Forward, Head};

use super::split::split_indices;
use crate::claims::{LabeledExample, PatientHistory};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::math::{logistic_loss, logit, sigmoid};
use crate::narrative::{tokenize_history, ClaimSequence, Vocabulary, CLS_ID, MASK_ID, SPECIALS};
use crate::rng::Rng;

/// Sequences per gradient chunk. Chunk sums are combined in order, so the
/// result does not depend on the thread count.
const GRAD_CHUNK: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformerConfig {
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub mask_rate: f64,
    pub pretrain_lr: f64,
    pub finetune_lr: f64,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    /// Pretraining uses at most this many sequences; 0 means all.
    pub max_pretrain_sequences: usize,
    pub batch_size: usize,
    pub grad_clip: f64,
    /// Fine-tune only the classification head.
    pub freeze_encoder: bool,
    pub validation_fraction: f64,
    /// Epochs without validation improvement before fine-tuning stops.
    pub patience: usize,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        TransformerConfig {
            layers: 2,
            heads: 4,
            dim: 64,
            ffn_dim: 256,
            max_len: 256,
            mask_rate: 0.30,
            pretrain_lr: 1e-3,
            finetune_lr: 5e-4,
            pretrain_epochs: 1,
            finetune_epochs: 3,
            max_pretrain_sequences: 0,
            batch_size: 32,
            grad_clip: 1.0,
            freeze_encoder: false,
            validation_fraction: 0.1,
            patience: 1,
            seed: 17,
            execution: Execution::Parallel,
        }
    }
}

impl TransformerConfig {
    pub fn architecture(&self, vocab_size: usize) -> Architecture {
        Architecture {
            vocab_size,
            dim: self.dim,
            ffn_dim: self.ffn_dim,
            layers: self.layers,
            heads: self.heads,
            max_len: self.max_len,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return Err(Error::Config("mask_rate must be in (0, 1)".into()));
        }
        if self.batch_size == 0 || !(self.pretrain_lr > 0.0) || !(self.finetune_lr > 0.0) {
            return Err(Error::Config("transformer batch_size and learning rates must be positive".into()));
        }
        if !(0.0..0.5).contains(&self.validation_fraction) {
            return Err(Error::Config("validation_fraction must be in [0, 0.5)".into()));
        }
        self.architecture(SPECIALS.len() + 1).validate()
    }
}

/// Replaces a `rate` share of the non-special positions: 80% become
/// `[MASK]`, 10% a uniformly random non-special token, 10% stay. Returns
/// the corrupted ids and the `(position, original id)` targets.
pub fn mask_sequence(ids: &[u32], vocab_size: usize, rate: f64, rng: &mut Rng) -> (Vec<u32>, Vec<(usize, u32)>) {
    let first = SPECIALS.len() as u32;
    let mut out = ids.to_vec();
    let mut targets = Vec::new();
    for (pos, &id) in ids.iter().enumerate() {
        if id < first || !rng.bernoulli(rate) {
            continue;
        }
        targets.push((pos, id));
        let u = rng.uniform();
        if u < 0.8 {
            out[pos] = MASK_ID;
        } else if u < 0.9 {
            out[pos] = first + rng.below(vocab_size as u64 - u64::from(first)) as u32;
        }
    }
    (out, targets)
}

#[derive(Clone, Debug)]
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grad[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + 1e-8);
        }
    }
}

fn clip(grad: &mut [f64], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
}

/// Summed loss and gradient over `items`, chunked for parallel execution.
fn batch_gradient<T: Sync>(
    layout: &Layout,
    params: &[f64],
    items: &[T],
    execution: Execution,
    head: impl Fn(&T) -> (&[u32], Head<'_>) + Sync + Send,
) -> (f64, Vec<f64>) {
    let parts = exec::map_chunks(execution, items, GRAD_CHUNK, |chunk| {
        let mut g = vec![0.0; layout.total];
        let mut loss = 0.0;
        for item in chunk {
            let (ids, h) = head(item);
            loss += loss_and_grad(layout, params, ids, h, Some(&mut g));
        }
        (loss, g)
    });
    let mut total = vec![0.0; layout.total];
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l;
        for (a, b) in total.iter_mut().zip(&g) {
            *a += b;
        }
    }
    (loss, total)
}

fn round_f32(params: &mut [f64]) {
    params.iter_mut().for_each(|x| *x = f64::from(*x as f32));
}

/// Encoder weights plus the (possibly untrained) classification head.
#[derive(Clone, Debug, PartialEq)]
pub struct MlmEncoder {
    config: TransformerConfig,
    layout: Layout,
    vocab: Arc<Vocabulary>,
    params: Vec<f64>,
}

impl MlmEncoder {
    /// Freshly initialized weights.
    pub fn random(vocab: Arc<Vocabulary>, config: &TransformerConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config.architecture(vocab.len()))?;
        let mut rng = Rng::derived(config.seed, 0x7f0, 0);
        let mut params = layout.init(&mut rng);
        round_f32(&mut params);
        Ok(MlmEncoder {
            config: config.clone(),
            layout,
            vocab,
            params,
        })
    }

    pub fn from_parts(vocab: Arc<Vocabulary>, config: TransformerConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config.architecture(vocab.len()))?;
        if params.len() != layout.total {
            return Err(Error::Dimension(format!(
                "{} parameters for a layout of {}",
                params.len(),
                layout.total
            )));
        }
        Ok(MlmEncoder {
            config,
            layout,
            vocab,
            params,
        })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Final hidden state at position 0.
    pub fn pooled(&self, ids: &[u32]) -> Result<Vec<f64>> {
        check_ids(&self.layout, ids)?;
        Ok(forward(&self.layout, &self.params, ids).pooled(self.layout.arch.dim).to_vec())
    }

    /// Mean masked-token loss of `seqs` under a fixed masking seed.
    pub fn masked_loss(&self, seqs: &[Vec<u32>], seed: u64) -> Result<f64> {
        let (mut loss, mut n) = (0.0, 0usize);
        for (i, ids) in seqs.iter().enumerate() {
            check_ids(&self.layout, ids)?;
            let mut rng = Rng::derived(seed, 0x7f3, i as u64);
            let (input, targets) = mask_sequence(ids, self.vocab.len(), self.config.mask_rate, &mut rng);
            loss += loss_and_grad(&self.layout, &self.params, &input, Head::Mlm(&targets), None);
            n += targets.len();
        }
        Ok(loss / n.max(1) as f64)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PretrainStats {
    /// Mean masked-token loss per optimizer step.
    pub step_losses: Vec<f64>,
    pub masked_positions: usize,
    pub maskable_positions: usize,
}

impl PretrainStats {
    pub fn mask_rate(&self) -> f64 {
        self.masked_positions as f64 / self.maskable_positions.max(1) as f64
    }
}

/// `[CLS]` followed by the claim tokens.
pub fn pretraining_input(seq: &ClaimSequence) -> Vec<u32> {
    std::iter::once(CLS_ID).chain(seq.ids.iter().copied()).collect()
}

/// Masked-LM pretraining from `start` (fresh weights when `None`) over
/// already-prefixed id sequences.
pub fn pretrain_ids(
    seqs: &[Vec<u32>],
    vocab: Arc<Vocabulary>,
    config: &TransformerConfig,
    start: Option<MlmEncoder>,
) -> Result<(MlmEncoder, PretrainStats)> {
    let mut enc = match start {
        Some(e) => e,
        None => MlmEncoder::random(vocab, config)?,
    };
    if seqs.is_empty() {
        return Err(Error::Empty("pretraining sequences"));
    }
    for ids in seqs {
        check_ids(&enc.layout, ids)?;
    }
    let limit = match config.max_pretrain_sequences {
        0 => seqs.len(),
        n => n.min(seqs.len()),
    };
    let first = SPECIALS.len() as u32;
    let vsz = enc.vocab.len();
    let mut adam = Adam::new(enc.layout.total);
    let mut stats = PretrainStats::default();
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    Rng::derived(config.seed, 0x7f1, 0).shuffle(&mut order);
    order.truncate(limit);
    let mut step = 0u64;
    for epoch in 0..config.pretrain_epochs {
        Rng::derived(config.seed, 0x7f2, epoch as u64).shuffle(&mut order);
        for batch in order.chunks(config.batch_size) {
            let masked: Vec<(Vec<u32>, Vec<(usize, u32)>)> = batch
                .iter()
                .enumerate()
                .map(|(k, &i)| {
                    let mut rng = Rng::derived(config.seed, 0x7f4 + step, k as u64);
                    mask_sequence(&seqs[i], vsz, config.mask_rate, &mut rng)
                })
                .collect();
            step += 1;
            for (&i, (_, t)) in batch.iter().zip(&masked) {
                stats.maskable_positions += seqs[i].iter().filter(|&&id| id >= first).count();
                stats.masked_positions += t.len();
            }
            let n_targets: usize = masked.iter().map(|(_, t)| t.len()).sum();
            if n_targets == 0 {
                continue;
            }
            let (loss, mut grad) = batch_gradient(&enc.layout, &enc.params, &masked, config.execution, |(ids, t)| {
                (ids.as_slice(), Head::Mlm(t))
            });
            let inv = 1.0 / n_targets as f64;
            grad.iter_mut().for_each(|g| *g *= inv);
            clip(&mut grad, config.grad_clip);
            adam.step(&mut enc.params, &grad, config.pretrain_lr);
            stats.step_losses.push(loss * inv);
        }
    }
    round_f32(&mut enc.params);
    Ok((enc, stats))
}

/// Masked-LM pretraining on claim sequences, each prefixed with `[CLS]`.
pub fn pretrain_mlm(
    sequences: &[ClaimSequence],
    vocab: Arc<Vocabulary>,
    config: &TransformerConfig,
) -> Result<(MlmEncoder, PretrainStats)> {
    config.validate()?;
    let seqs: Vec<Vec<u32>> = sequences.iter().map(pretraining_input).collect();
    pretrain_ids(&seqs, vocab, config, None)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FinetuneStats {
    pub train_losses: Vec<f64>,
    pub validation_losses: Vec<f64>,
    /// Epoch whose weights were kept (1-based; 0 means the starting point).
    pub best_epoch: usize,
}

/// Fine-tuned transformer classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct MlmTransformer {
    encoder: MlmEncoder,
}

impl MlmTransformer {
    pub fn new(encoder: MlmEncoder) -> Self {
        MlmTransformer { encoder }
    }

    pub fn encoder(&self) -> &MlmEncoder {
        &self.encoder
    }

    pub fn token_ids(&self, history: &PatientHistory) -> Vec<u32> {
        tokenize_history(history, &self.encoder.vocab, self.encoder.layout.arch.max_len).ids
    }

    pub fn predict_ids(&self, ids: &[u32]) -> f64 {
        let e = &self.encoder;
        let fwd = forward(&e.layout, &e.params, ids);
        sigmoid(cls_logit(&e.layout, &e.params, fwd.pooled(e.layout.arch.dim)))
    }

    pub fn predict_proba(&self, history: &PatientHistory) -> f64 {
        self.predict_ids(&self.token_ids(history))
    }
}

fn mean_bce(enc: &MlmEncoder, data: &[(Vec<u32>, f64)], execution: Execution) -> f64 {
    let losses = exec::map(execution, data, |(ids, y)| {
        let fwd = forward(&enc.layout, &enc.params, ids);
        logistic_loss(cls_logit(&enc.layout, &enc.params, fwd.pooled(enc.layout.arch.dim)), *y)
    });
    exec::ordered_sum(losses) / data.len().max(1) as f64
}

/// Trains the `[CLS]` head (and the encoder unless frozen) with logistic
/// loss, keeping the weights with the best validation loss.
pub fn finetune_classifier(
    encoder: &MlmEncoder,
    train: &[LabeledExample],
    config: &TransformerConfig,
) -> Result<(MlmTransformer, FinetuneStats)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("fine-tuning set"));
    }
    let mut enc = encoder.clone();
    let max_len = enc.layout.arch.max_len;
    let data: Vec<(Vec<u32>, f64)> = train
        .iter()
        .map(|e| (tokenize_history(&e.history, &enc.vocab, max_len).ids, e.label.as_f64()))
        .collect();
    let labels: Vec<bool> = train.iter().map(|e| e.label.is_positive()).collect();
    let (fit_idx, val_idx) = if config.validation_fraction > 0.0 {
        split_indices(&labels, 1.0 - config.validation_fraction, true, config.seed)?
    } else {
        ((0..data.len()).collect(), Vec::new())
    };
    let fit: Vec<(Vec<u32>, f64)> = fit_idx.iter().map(|&i| data[i].clone()).collect();
    let val: Vec<(Vec<u32>, f64)> = val_idx.iter().map(|&i| data[i].clone()).collect();

    let rate = (fit.iter().map(|d| d.1).sum::<f64>() / fit.len() as f64).clamp(1e-6, 1.0 - 1e-6);
    enc.params[enc.layout.cls_b] = logit(rate);
    let layout = enc.layout.clone();
    let d = layout.arch.dim;
    // A frozen encoder gives fixed pooled features; compute them once.
    let pooled: Vec<Vec<f64>> = if config.freeze_encoder {
        exec::map(config.execution, &fit, |(ids, _)| {
            forward(&layout, &enc.params, ids).pooled(d).to_vec()
        })
    } else {
        Vec::new()
    };
    let mut adam = Adam::new(layout.total);
    let mut stats = FinetuneStats::default();
    let mut best = (if val.is_empty() { f64::INFINITY } else { mean_bce(&enc, &val, config.execution) }, enc.params.clone());
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..fit.len()).collect();
    for epoch in 0..config.finetune_epochs {
        Rng::derived(config.seed, 0x7f5, epoch as u64).shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let (loss, mut grad) = if config.freeze_encoder {
                let mut g = vec![0.0; layout.total];
                let mut loss = 0.0;
                for &i in batch {
                    let z = cls_logit(&layout, &enc.params, &pooled[i]);
                    loss += logistic_loss(z, fit[i].1);
                    let dl = sigmoid(z) - fit[i].1;
                    g[layout.cls_b] += dl;
                    for c in 0..d {
                        g[layout.cls_w + c] += dl * pooled[i][c];
                    }
                }
                (loss, g)
            } else {
                let items: Vec<&(Vec<u32>, f64)> = batch.iter().map(|&i| &fit[i]).collect();
                batch_gradient(&layout, &enc.params, &items, config.execution, |item| (item.0.as_slice(), Head::Cls(item.1)))
            };
            epoch_loss += loss;
            let inv = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= inv);
            if config.freeze_encoder {
                grad[..layout.head_start].iter_mut().for_each(|g| *g = 0.0);
            }
            clip(&mut grad, config.grad_clip);
            adam.step(&mut enc.params, &grad, config.finetune_lr);
        }
        stats.train_losses.push(epoch_loss / fit.len() as f64);
        if val.is_empty() {
            best = (f64::INFINITY, enc.params.clone());
            stats.best_epoch = epoch + 1;
            continue;
        }
        let v = mean_bce(&enc, &val, config.execution);
        stats.validation_losses.push(v);
        if v < best.0 {
            best = (v, enc.params.clone());
            stats.best_epoch = epoch + 1;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    enc.params = best.1;
    round_f32(&mut enc.params);
    Ok((MlmTransformer { encoder: enc }, stats))
}
