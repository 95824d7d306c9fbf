use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::split::split_indices;
use crate::claims::{LabeledExample, PatientHistory};
use crate::error::{Error, Result};
use crate::math::sigmoid;
use crate::narrative::{code_surface, Vocabulary};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmConfig {
    pub lambda: f64,
    pub epochs: usize,
    /// Initial step; decays as `eta0 / (1 + eta0 * lambda * t)`.
    pub eta0: f64,
    /// Share of the training set held out for Platt calibration.
    pub calibration_fraction: f64,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            lambda: 1e-4,
            epochs: 10,
            eta0: 0.1,
            calibration_fraction: 0.1,
            seed: 11,
        }
    }
}

/// Sorted distinct vocabulary ids of the codes in `history`; codes outside
/// the vocabulary are dropped.
pub fn code_presence(history: &PatientHistory, vocab: &Vocabulary) -> Vec<u32> {
    let mut ids: Vec<u32> = history
        .codes()
        .filter_map(|c| vocab.get(&code_surface(c)))
        .collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

/// `lambda/2 |w|^2 + mean(max(0, 1 - y (w.x + b)))` for binary rows given as
/// active-feature lists and labels in {-1, +1}.
pub fn svm_objective(rows: &[Vec<u32>], y: &[f64], w: &[f64], b: f64, lambda: f64) -> f64 {
    let hinge: f64 = rows
        .iter()
        .zip(y)
        .map(|(r, &yi)| (1.0 - yi * margin(r, w, b)).max(0.0))
        .sum();
    0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>() + hinge / rows.len() as f64
}

/// A subgradient of [`svm_objective`]; examples exactly on the margin
/// contribute zero.
pub fn svm_subgradient(rows: &[Vec<u32>], y: &[f64], w: &[f64], b: f64, lambda: f64) -> (Vec<f64>, f64) {
    let n = rows.len() as f64;
    let mut gw: Vec<f64> = w.iter().map(|v| lambda * v).collect();
    let mut gb = 0.0;
    for (r, &yi) in rows.iter().zip(y) {
        if yi * margin(r, w, b) < 1.0 {
            for &j in r {
                gw[j as usize] -= yi / n;
            }
            gb -= yi / n;
        }
    }
    (gw, gb)
}

fn margin(row: &[u32], w: &[f64], b: f64) -> f64 {
    b + row.iter().map(|&j| w[j as usize]).sum::<f64>()
}

/// Platt scaling: fits `p = 1 / (1 + exp(a f + b))` by Newton's method with
/// backtracking on regularized targets.
pub fn fit_platt(scores: &[f64], labels: &[bool]) -> (f64, f64) {
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    let hi = (n_pos + 1.0) / (n_pos + 2.0);
    let lo = 1.0 / (n_neg + 2.0);
    let t: Vec<f64> = labels.iter().map(|&l| if l { hi } else { lo }).collect();
    // Negative log-likelihood in a numerically safe form.
    let objective = |a: f64, b: f64| -> f64 {
        scores
            .iter()
            .zip(&t)
            .map(|(&f, &ti)| {
                let z = a * f + b;
                if z >= 0.0 {
                    ti * z + (-z).exp().ln_1p()
                } else {
                    (ti - 1.0) * z + z.exp().ln_1p()
                }
            })
            .sum()
    };
    let mut a = 0.0;
    let mut b = ((n_neg + 1.0) / (n_pos + 1.0)).ln();
    let mut fval = objective(a, b);
    for _ in 0..100 {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (1e-12, 1e-12, 0.0, 0.0, 0.0);
        for (&f, &ti) in scores.iter().zip(&t) {
            // p here is P(y = 1) = 1 / (1 + exp(z))
            let p = sigmoid(-(a * f + b));
            let q = 1.0 - p;
            let d2 = p * q;
            h11 += f * f * d2;
            h22 += d2;
            h21 += f * d2;
            let d1 = ti - p;
            g1 += f * d1;
            g2 += d1;
        }
        if g1.abs() < 1e-10 && g2.abs() < 1e-10 {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        let mut moved = false;
        while step >= 1e-10 {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                moved = true;
                break;
            }
            step /= 2.0;
        }
        if !moved {
            break;
        }
    }
    (a, b)
}

/// Linear SVM over binary code presence with Platt-calibrated output.
#[derive(Clone, Debug, PartialEq)]
pub struct BowSvm {
    vocab: Arc<Vocabulary>,
    weights: Vec<f64>,
    bias: f64,
    platt: (f64, f64),
}

impl BowSvm {
    pub fn from_parts(vocab: Arc<Vocabulary>, weights: Vec<f64>, bias: f64, platt: (f64, f64)) -> Result<Self> {
        if weights.len() != vocab.len() {
            return Err(Error::Dimension(format!(
                "{} weights for a vocabulary of {}",
                weights.len(),
                vocab.len()
            )));
        }
        Ok(BowSvm {
            vocab,
            weights,
            bias,
            platt,
        })
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn platt(&self) -> (f64, f64) {
        self.platt
    }

    pub fn decision(&self, history: &PatientHistory) -> f64 {
        margin(&code_presence(history, &self.vocab), &self.weights, self.bias)
    }

    pub fn predict_proba(&self, history: &PatientHistory) -> f64 {
        let (a, b) = self.platt;
        sigmoid(-(a * self.decision(history) + b))
    }
}

/// SGD on the primal hinge objective with the weight vector kept as
/// `scale * v` so each step touches only the active features.
fn sgd(rows: &[Vec<u32>], y: &[f64], dim: usize, config: &SvmConfig) -> (Vec<f64>, f64) {
    let mut v = vec![0.0; dim];
    let mut scale = 1.0;
    let mut b = 0.0;
    let mut t = 0.0;
    let mut order: Vec<usize> = (0..rows.len()).collect();
    for epoch in 0..config.epochs {
        Rng::derived(config.seed, 0x5f0, epoch as u64).shuffle(&mut order);
        for &i in &order {
            let eta = config.eta0 / (1.0 + config.eta0 * config.lambda * t);
            let m = b + scale * rows[i].iter().map(|&j| v[j as usize]).sum::<f64>();
            scale *= 1.0 - eta * config.lambda;
            if y[i] * m < 1.0 {
                let delta = eta * y[i] / scale;
                for &j in &rows[i] {
                    v[j as usize] += delta;
                }
                b += eta * y[i];
            }
            if scale < 1e-9 {
                v.iter_mut().for_each(|x| *x *= scale);
                scale = 1.0;
            }
            t += 1.0;
        }
    }
    (v.into_iter().map(|x| x * scale).collect(), b)
}

pub fn train_bow_svm(train: &[LabeledExample], vocab: Arc<Vocabulary>, config: &SvmConfig) -> Result<BowSvm> {
    if train.is_empty() {
        return Err(Error::Empty("bow-svm training set"));
    }
    let labels: Vec<bool> = train.iter().map(|e| e.label.is_positive()).collect();
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return Err(Error::Invalid("bow-svm needs both classes in the training set".into()));
    }
    if !(config.lambda > 0.0 && config.eta0 > 0.0) {
        return Err(Error::Config("svm lambda and eta0 must be positive".into()));
    }
    let (fit_idx, cal_idx) = split_indices(&labels, 1.0 - config.calibration_fraction, true, config.seed)?;
    let rows: Vec<Vec<u32>> = train.iter().map(|e| code_presence(&e.history, &vocab)).collect();
    let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
    let fit_rows: Vec<Vec<u32>> = fit_idx.iter().map(|&i| rows[i].clone()).collect();
    let fit_y: Vec<f64> = fit_idx.iter().map(|&i| y[i]).collect();
    let (w, b) = sgd(&fit_rows, &fit_y, vocab.len(), config);
    let w: Vec<f64> = w.into_iter().map(|x| f64::from(x as f32)).collect();
    let b = f64::from(b as f32);
    let scores: Vec<f64> = cal_idx.iter().map(|&i| margin(&rows[i], &w, b)).collect();
    let cal_labels: Vec<bool> = cal_idx.iter().map(|&i| labels[i]).collect();
    let (pa, pb) = fit_platt(&scores, &cal_labels);
    BowSvm::from_parts(vocab, w, b, (f64::from(pa as f32), f64::from(pb as f32)))
}
