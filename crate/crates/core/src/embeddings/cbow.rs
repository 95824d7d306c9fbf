//! Continuous bag-of-words with negative sampling.
//!
//! For each position the mean of the surrounding input vectors `h` predicts
//! the center token against `k` sampled noise tokens:
//!
//! ```text
//! loss = -ln σ(u_center · h) - Σ_k ln σ(-u_neg_k · h)
//! ```
//!
//! Parallel mode splits the sequences into shards that update shared
//! matrices without locks (hogwild). Updates use relaxed atomics, so the
//! result depends on thread interleaving. Sequential mode is bitwise
//! reproducible.

use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::table::EmbeddingTable;
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::narrative::{ClaimSequence, Vocabulary, SPECIALS};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CbowConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub learning_rate: f64,
    /// Floor of the linear decay, as a fraction of `learning_rate`.
    pub min_learning_rate_ratio: f64,
    pub epochs: usize,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for CbowConfig {
    fn default() -> Self {
        CbowConfig {
            dim: 64,
            window: 10,
            negatives: 5,
            learning_rate: 0.05,
            min_learning_rate_ratio: 1e-4,
            epochs: 5,
            seed: 1,
            execution: Execution::Sequential,
        }
    }
}

impl CbowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.window == 0 || self.negatives == 0 || self.epochs == 0 {
            return Err(Error::Config("cbow dim, window, negatives and epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("cbow learning_rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CbowStats {
    /// Mean loss per trained position, one entry per epoch.
    pub epoch_losses: Vec<f64>,
    pub positions_per_epoch: usize,
}

/// Gradients of one negative-sampling step.
#[derive(Clone, Debug, PartialEq)]
pub struct CbowGradients<F> {
    pub loss: F,
    /// Gradient for each context input vector (shared, since `h` is a mean).
    pub context: Vec<F>,
    pub center: Vec<F>,
    pub negatives: Vec<Vec<F>>,
}

fn sigmoid<F: Float>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

fn ln_sigmoid<F: Float>(x: F) -> F {
    // ln σ(x) = -softplus(-x)
    if x > F::zero() {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Loss and gradients for context vectors `context`, center output vector
/// `center` and noise output vectors `negatives`.
pub fn cbow_step_gradients<F: Float>(context: &[&[F]], center: &[F], negatives: &[&[F]]) -> CbowGradients<F> {
    let dim = center.len();
    let n_ctx = F::from(context.len()).expect("small count");
    let mut h = vec![F::zero(); dim];
    for row in context {
        for (a, &b) in h.iter_mut().zip(row.iter()) {
            *a = *a + b;
        }
    }
    for a in &mut h {
        *a = *a / n_ctx;
    }
    let dot = |u: &[F]| u.iter().zip(&h).fold(F::zero(), |acc, (&x, &y)| acc + x * y);
    let mut grad_h = vec![F::zero(); dim];
    let s_pos = dot(center);
    let mut loss = -ln_sigmoid(s_pos);
    let g_pos = sigmoid(s_pos) - F::one();
    let center_grad: Vec<F> = h.iter().map(|&x| g_pos * x).collect();
    for (gh, &u) in grad_h.iter_mut().zip(center) {
        *gh = *gh + g_pos * u;
    }
    let mut neg_grads = Vec::with_capacity(negatives.len());
    for u in negatives {
        let s = dot(u);
        loss = loss - ln_sigmoid(-s);
        let g = sigmoid(s);
        neg_grads.push(h.iter().map(|&x| g * x).collect());
        for (gh, &v) in grad_h.iter_mut().zip(u.iter()) {
            *gh = *gh + g * v;
        }
    }
    let context_grad = grad_h.iter().map(|&g| g / n_ctx).collect();
    CbowGradients {
        loss,
        context: context_grad,
        center: center_grad,
        negatives: neg_grads,
    }
}

struct SharedMatrix {
    cols: usize,
    data: Vec<AtomicU32>,
}

impl SharedMatrix {
    fn new(values: impl IntoIterator<Item = f32>, cols: usize) -> Self {
        SharedMatrix {
            cols,
            data: values.into_iter().map(|x| AtomicU32::new(x.to_bits())).collect(),
        }
    }

    fn read(&self, row: u32, out: &mut [f32]) {
        let start = row as usize * self.cols;
        for (o, a) in out.iter_mut().zip(&self.data[start..start + self.cols]) {
            *o = f32::from_bits(a.load(Ordering::Relaxed));
        }
    }

    fn add_scaled(&self, row: u32, delta: &[f32], scale: f32) {
        let start = row as usize * self.cols;
        for (d, a) in delta.iter().zip(&self.data[start..start + self.cols]) {
            let v = f32::from_bits(a.load(Ordering::Relaxed)) + scale * d;
            a.store(v.to_bits(), Ordering::Relaxed);
        }
    }

    fn into_vec(self) -> Vec<f32> {
        self.data.into_iter().map(|a| f32::from_bits(a.into_inner())).collect()
    }
}

/// Cumulative unigram^0.75 weights over non-special tokens.
fn noise_table(vocab: &Vocabulary) -> Vec<f64> {
    let mut acc = 0.0;
    (0..vocab.len() as u32)
        .map(|id| {
            if (id as usize) >= SPECIALS.len() {
                acc += (vocab.frequency(id) as f64).powf(0.75);
            }
            acc
        })
        .collect()
}

struct Trainer<'a> {
    config: &'a CbowConfig,
    input: SharedMatrix,
    output: SharedMatrix,
    noise: Vec<f64>,
    total_positions: f64,
}

impl Trainer<'_> {
    /// Trains over `seqs`; returns (summed loss, positions). `offset` is the
    /// number of positions already processed, for the learning-rate schedule.
    /// Concurrent shards each advance it by `stride` per position.
    fn run_shard(&self, seqs: &[Vec<u32>], rng: &mut Rng, mut offset: f64, stride: f64) -> (f64, usize) {
        let dim = self.config.dim;
        let lr0 = self.config.learning_rate;
        let floor = lr0 * self.config.min_learning_rate_ratio;
        let mut ctx_rows: Vec<Vec<f32>> = Vec::new();
        let mut center = vec![0f32; dim];
        let mut neg_rows: Vec<Vec<f32>> = vec![vec![0f32; dim]; self.config.negatives];
        let mut neg_ids = vec![0u32; self.config.negatives];
        let (mut loss_sum, mut count) = (0.0, 0usize);
        for seq in seqs {
            for pos in 0..seq.len() {
                let lo = pos.saturating_sub(self.config.window);
                let hi = (pos + self.config.window + 1).min(seq.len());
                let ctx: Vec<u32> = (lo..hi).filter(|&j| j != pos).map(|j| seq[j]).collect();
                if ctx.is_empty() {
                    continue;
                }
                let target = seq[pos];
                ctx_rows.resize_with(ctx.len(), || vec![0f32; dim]);
                for (row, &id) in ctx_rows.iter_mut().zip(&ctx) {
                    self.input.read(id, row);
                }
                self.output.read(target, &mut center);
                for (slot, row) in neg_ids.iter_mut().zip(neg_rows.iter_mut()) {
                    let mut id = target;
                    for _ in 0..10 {
                        id = rng.weighted_index(&self.noise) as u32;
                        if id != target {
                            break;
                        }
                    }
                    *slot = id;
                    self.output.read(id, row);
                }
                let ctx_refs: Vec<&[f32]> = ctx_rows.iter().map(Vec::as_slice).collect();
                let neg_refs: Vec<&[f32]> = neg_rows.iter().map(Vec::as_slice).collect();
                let g = cbow_step_gradients(&ctx_refs, &center, &neg_refs);
                let progress = offset / self.total_positions;
                let lr = (lr0 * (1.0 - progress)).max(floor) as f32;
                self.output.add_scaled(target, &g.center, -lr);
                for (&id, grad) in neg_ids.iter().zip(&g.negatives) {
                    self.output.add_scaled(id, grad, -lr);
                }
                for &id in &ctx {
                    self.input.add_scaled(id, &g.context, -lr);
                }
                loss_sum += f64::from(g.loss);
                count += 1;
                offset += stride;
            }
        }
        (loss_sum, count)
    }
}

/// Trains input vectors for every vocabulary token. Special tokens are
/// skipped as centers and as context.
pub fn train_cbow(
    sequences: &[ClaimSequence],
    vocab: Arc<Vocabulary>,
    config: &CbowConfig,
) -> Result<(EmbeddingTable, CbowStats)> {
    config.validate()?;
    let seqs: Vec<Vec<u32>> = sequences
        .iter()
        .map(|s| s.ids.iter().copied().filter(|&id| id as usize >= SPECIALS.len()).collect::<Vec<_>>())
        .filter(|s| s.len() >= 2)
        .collect();
    if seqs.is_empty() {
        return Err(Error::Empty("no sequence has two or more trainable tokens"));
    }
    let dim = config.dim;
    let mut init_rng = Rng::derived(config.seed, 0xcb0, 0);
    let scale = 0.5 / dim as f64;
    let input = SharedMatrix::new(
        (0..vocab.len() * dim).map(|_| ((init_rng.uniform() * 2.0 - 1.0) * scale) as f32),
        dim,
    );
    let output = SharedMatrix::new(std::iter::repeat_n(0.0, vocab.len() * dim), dim);
    let positions_per_epoch: usize = seqs.iter().map(Vec::len).sum();
    let trainer = Trainer {
        config,
        input,
        output,
        noise: noise_table(&vocab),
        total_positions: (positions_per_epoch * config.epochs) as f64,
    };
    let mut stats = CbowStats {
        epoch_losses: Vec::with_capacity(config.epochs),
        positions_per_epoch,
    };
    let shards = if config.execution.is_parallel() {
        #[cfg(feature = "parallel")]
        {
            rayon::current_num_threads().max(1)
        }
        #[cfg(not(feature = "parallel"))]
        {
            1
        }
    } else {
        1
    };
    let shard_len = seqs.len().div_ceil(shards);
    for epoch in 0..config.epochs {
        let epoch_offset = (epoch * positions_per_epoch) as f64;
        let results = exec::map_range(config.execution, shards, |s| {
            let lo = (s * shard_len).min(seqs.len());
            let hi = ((s + 1) * shard_len).min(seqs.len());
            let mut rng = Rng::derived(config.seed, 0xcb1 + epoch as u64, s as u64);
            trainer.run_shard(&seqs[lo..hi], &mut rng, epoch_offset, shards as f64)
        });
        let (loss, count) = results
            .into_iter()
            .fold((0.0, 0usize), |(l, c), (l2, c2)| (l + l2, c + c2));
        stats.epoch_losses.push(loss / count.max(1) as f64);
    }
    let table = EmbeddingTable::new(vocab, dim, trainer.input.into_vec())?;
    Ok((table, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Norm-wise relative error between two gradient vectors.
    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        diff / na.max(nb).max(1e-300)
    }

    #[test]
    fn step_gradient_matches_finite_differences() {
        let mut rng = Rng::new(4);
        let dim = 6;
        let mut draw = || (0..dim).map(|_| rng.normal() * 0.5).collect::<Vec<f64>>();
        let ctx = vec![draw(), draw(), draw()];
        let center = draw();
        let negs = vec![draw(), draw()];
        let loss = |ctx: &[Vec<f64>], center: &[f64], negs: &[Vec<f64>]| {
            let c: Vec<&[f64]> = ctx.iter().map(Vec::as_slice).collect();
            let n: Vec<&[f64]> = negs.iter().map(Vec::as_slice).collect();
            cbow_step_gradients(&c, center, &n).loss
        };
        let c: Vec<&[f64]> = ctx.iter().map(Vec::as_slice).collect();
        let n: Vec<&[f64]> = negs.iter().map(Vec::as_slice).collect();
        let g = cbow_step_gradients(&c, &center, &n);
        let step = 1e-5;
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for which in 0..ctx.len() {
            for d in 0..dim {
                let (mut p, mut m) = (ctx.clone(), ctx.clone());
                p[which][d] += step;
                m[which][d] -= step;
                numeric.push((loss(&p, &center, &negs) - loss(&m, &center, &negs)) / (2.0 * step));
                analytic.push(g.context[d]);
            }
        }
        for d in 0..dim {
            let (mut p, mut m) = (center.clone(), center.clone());
            p[d] += step;
            m[d] -= step;
            numeric.push((loss(&ctx, &p, &negs) - loss(&ctx, &m, &negs)) / (2.0 * step));
            analytic.push(g.center[d]);
        }
        for k in 0..negs.len() {
            for d in 0..dim {
                let (mut p, mut m) = (negs.clone(), negs.clone());
                p[k][d] += step;
                m[k][d] -= step;
                numeric.push((loss(&ctx, &center, &p) - loss(&ctx, &center, &m)) / (2.0 * step));
                analytic.push(g.negatives[k][d]);
            }
        }
        let err = rel_err(&analytic, &numeric);
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn ln_sigmoid_is_stable() {
        assert!((ln_sigmoid(0.0f64) - (0.5f64).ln()).abs() < 1e-15);
        assert!(ln_sigmoid(-800.0f64).is_finite());
        assert!(ln_sigmoid(800.0f64) == 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(CbowConfig::default().validate().is_ok());
        assert_eq!(CbowConfig::default().window, 10);
        let bad = CbowConfig { window: 0, ..CbowConfig::default() };
        assert!(bad.validate().is_err());
    }
}
