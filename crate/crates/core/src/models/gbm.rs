//! Gradient boosting on logistic loss with binned regression trees.
//!
//! Each stage fits a tree to the residuals `y - p` by squared-error split
//! gain, then sets every leaf to the Newton step `sum r / sum p(1-p)` times
//! the learning rate. A leaf value that would raise the training loss of its
//! own samples is halved until it does not (zero in the limit), so the
//! staged training loss never increases. Thresholds and leaf values are
//! rounded to f32 as they are chosen, so a saved model predicts exactly what
//! the trainer saw.

use serde::{Deserialize, Serialize};

use crate::claims::{LabeledExample, PatientHistory};
use crate::embeddings::{feature_len, featurize_history, EmbeddingTable};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::math::{logistic_loss, logit, sigmoid};
use crate::rng::Rng;

pub const MAX_BINS: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbmConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    pub subsample: f64,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for GbmConfig {
    fn default() -> Self {
        GbmConfig {
            n_trees: 100,
            max_depth: 3,
            learning_rate: 0.1,
            min_samples_leaf: 20,
            subsample: 1.0,
            seed: 13,
            execution: Execution::Parallel,
        }
    }
}

impl GbmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::Config("gbm learning_rate must be in (0, 1]".into()));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(Error::Config("gbm subsample must be in (0, 1]".into()));
        }
        if self.max_depth == 0 || self.min_samples_leaf == 0 {
            return Err(Error::Config("gbm max_depth and min_samples_leaf must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go to `left`.
    Split {
        feature: usize,
        threshold: f32,
        left: usize,
        right: usize,
    },
    Leaf { value: f32 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return f64::from(value),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= f64::from(threshold) { left } else { right },
            }
        }
    }

    fn leaf_of(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= f64::from(threshold) { left } else { right },
            }
        }
    }
}

/// Row-major feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("feature rows differ in length".into()));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Candidate thresholds per feature and each row's bin: bin `k` holds rows
/// with `t[k-1] < x <= t[k]`.
struct Binned {
    thresholds: Vec<Vec<f32>>,
    /// Column-major bin codes.
    bins: Vec<Vec<u8>>,
}

fn bin_feature(values: &[f64]) -> (Vec<f32>, Vec<u8>) {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let cuts: Vec<usize> = if sorted.len() <= MAX_BINS {
        (1..sorted.len()).collect()
    } else {
        // Evenly spaced boundaries over the distinct values.
        let mut c: Vec<usize> = (1..MAX_BINS).map(|k| k * sorted.len() / MAX_BINS).collect();
        c.dedup();
        c
    };
    let mut thresholds: Vec<f32> = Vec::with_capacity(cuts.len());
    for &c in &cuts {
        let (lo, hi) = (sorted[c - 1], sorted[c]);
        let t = (lo + 0.5 * (hi - lo)) as f32;
        // Keep only thresholds that still separate the two neighbors after
        // rounding.
        if f64::from(t) >= lo && f64::from(t) < hi && thresholds.last().is_none_or(|&p| p < t) {
            thresholds.push(t);
        }
    }
    let bins = values
        .iter()
        .map(|&x| thresholds.partition_point(|&t| f64::from(t) < x) as u8)
        .collect();
    (thresholds, bins)
}

impl Binned {
    fn new(x: &Matrix, execution: Execution) -> Self {
        let cols = exec::map_range(execution, x.cols, |j| {
            let col: Vec<f64> = (0..x.rows).map(|i| x.data[i * x.cols + j]).collect();
            bin_feature(&col)
        });
        let (thresholds, bins) = cols.into_iter().unzip();
        Binned { thresholds, bins }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct SplitChoice {
    feature: usize,
    bin: usize,
    gain: f64,
}

/// Best split of `rows` by squared-error reduction on `r`. Ties keep the
/// lowest feature, then the lowest threshold.
fn best_split(binned: &Binned, rows: &[usize], r: &[f64], min_leaf: usize, execution: Execution) -> Option<SplitChoice> {
    let n = rows.len();
    if n < 2 * min_leaf {
        return None;
    }
    let total: f64 = rows.iter().map(|&i| r[i]).sum();
    let parent = total * total / n as f64;
    let per_feature = exec::map_range(execution, binned.bins.len(), |j| {
        let nt = binned.thresholds[j].len();
        if nt == 0 {
            return None;
        }
        let mut sum = vec![0.0; nt + 1];
        let mut count = vec![0usize; nt + 1];
        let col = &binned.bins[j];
        for &i in rows {
            let b = col[i] as usize;
            sum[b] += r[i];
            count[b] += 1;
        }
        let mut best: Option<SplitChoice> = None;
        let (mut sl, mut nl) = (0.0, 0usize);
        for k in 0..nt {
            sl += sum[k];
            nl += count[k];
            let nr = n - nl;
            if nl < min_leaf || nr < min_leaf {
                continue;
            }
            let sr = total - sl;
            let gain = sl * sl / nl as f64 + sr * sr / nr as f64 - parent;
            if best.is_none_or(|b| gain > b.gain) {
                best = Some(SplitChoice { feature: j, bin: k, gain });
            }
        }
        best
    });
    per_feature
        .into_iter()
        .flatten()
        .fold(None, |acc: Option<SplitChoice>, c| match acc {
            Some(a) if c.gain <= a.gain => Some(a),
            _ => Some(c),
        })
        .filter(|c| c.gain > 1e-12)
}

fn grow(
    binned: &Binned,
    rows: Vec<usize>,
    r: &[f64],
    depth: usize,
    config: &GbmConfig,
    nodes: &mut Vec<Node>,
    leaves: &mut Vec<(usize, Vec<usize>)>,
) -> usize {
    let id = nodes.len();
    nodes.push(Node::Leaf { value: 0.0 });
    let split = if depth < config.max_depth {
        best_split(binned, &rows, r, config.min_samples_leaf, config.execution)
    } else {
        None
    };
    match split {
        None => leaves.push((id, rows)),
        Some(s) => {
            let col = &binned.bins[s.feature];
            let (lrows, rrows): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| col[i] as usize <= s.bin);
            let left = grow(binned, lrows, r, depth + 1, config, nodes, leaves);
            let right = grow(binned, rrows, r, depth + 1, config, nodes, leaves);
            nodes[id] = Node::Split {
                feature: s.feature,
                threshold: binned.thresholds[s.feature][s.bin],
                left,
                right,
            };
        }
    }
    id
}

/// Fits one regression tree to `residuals` on `rows` and returns it with
/// the rows of each leaf. Leaf values are left at zero.
fn fit_structure(
    binned: &Binned,
    rows: Vec<usize>,
    residuals: &[f64],
    config: &GbmConfig,
) -> (Vec<Node>, Vec<(usize, Vec<usize>)>) {
    let mut nodes = Vec::new();
    let mut leaves = Vec::new();
    grow(binned, rows, residuals, 0, config, &mut nodes, &mut leaves);
    (nodes, leaves)
}

/// Squared-error regression tree on all rows of `x`, leaf values set to the
/// mean residual. Exposed for split-search checks.
pub fn fit_regression_tree(x: &Matrix, residuals: &[f64], config: &GbmConfig) -> Tree {
    let binned = Binned::new(x, config.execution);
    let (mut nodes, leaves) = fit_structure(&binned, (0..x.rows).collect(), residuals, config);
    for (id, rows) in leaves {
        let mean = rows.iter().map(|&i| residuals[i]).sum::<f64>() / rows.len().max(1) as f64;
        nodes[id] = Node::Leaf { value: mean as f32 };
    }
    Tree { nodes }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GbmModel {
    pub init: f32,
    pub trees: Vec<Tree>,
    pub n_features: usize,
}

impl GbmModel {
    pub fn raw_score(&self, x: &[f64]) -> f64 {
        self.trees.iter().fold(f64::from(self.init), |acc, t| acc + t.predict(x))
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.raw_score(x))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GbmFit {
    pub model: GbmModel,
    /// Mean training log-loss before any tree and after each stage.
    pub stage_losses: Vec<f64>,
}

fn leaf_loss(rows: &[usize], f: &[f64], y: &[f64], delta: f64) -> f64 {
    rows.iter().map(|&i| logistic_loss(f[i] + delta, y[i])).sum()
}

pub fn train_gbm(x: &Matrix, y: &[f64], config: &GbmConfig) -> Result<GbmFit> {
    config.validate()?;
    let n = x.rows;
    if n == 0 || y.len() != n {
        return Err(Error::Empty("gbm training set"));
    }
    let rate = (y.iter().sum::<f64>() / n as f64).clamp(1e-6, 1.0 - 1e-6);
    let init = logit(rate) as f32;
    let binned = Binned::new(x, config.execution);
    let mut f = vec![f64::from(init); n];
    let mean_loss = |f: &[f64]| f.iter().zip(y).map(|(&z, &t)| logistic_loss(z, t)).sum::<f64>() / n as f64;
    let mut stage_losses = vec![mean_loss(&f)];
    let mut trees = Vec::with_capacity(config.n_trees);
    let mut sample_rng = Rng::derived(config.seed, 0x6b0, 0);
    for _ in 0..config.n_trees {
        let p: Vec<f64> = f.iter().map(|&z| sigmoid(z)).collect();
        let r: Vec<f64> = y.iter().zip(&p).map(|(t, q)| t - q).collect();
        let rows: Vec<usize> = if config.subsample < 1.0 {
            let mut all: Vec<usize> = (0..n).collect();
            sample_rng.shuffle(&mut all);
            let k = ((n as f64 * config.subsample).round() as usize).max(1);
            let mut s = all[..k].to_vec();
            s.sort_unstable();
            s
        } else {
            (0..n).collect()
        };
        let (mut nodes, _) = fit_structure(&binned, rows, &r, config);
        let mut tree = Tree { nodes: nodes.clone() };
        // Leaf membership over all rows, so the loss guard covers rows
        // outside the subsample as well.
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
        for i in 0..n {
            members[tree.leaf_of(x.row(i))].push(i);
        }
        for (id, rows) in members.iter().enumerate() {
            if !matches!(nodes[id], Node::Leaf { .. }) || rows.is_empty() {
                continue;
            }
            let num: f64 = rows.iter().map(|&i| r[i]).sum();
            let den: f64 = rows.iter().map(|&i| p[i] * (1.0 - p[i])).sum();
            let mut value = if den > 1e-12 { (config.learning_rate * num / den) as f32 } else { 0.0 };
            let before = leaf_loss(rows, &f, y, 0.0);
            let mut tries = 0;
            while value != 0.0 && leaf_loss(rows, &f, y, f64::from(value)) > before {
                tries += 1;
                value = if tries > 40 { 0.0 } else { value / 2.0 };
            }
            nodes[id] = Node::Leaf { value };
        }
        tree.nodes = nodes;
        for (i, fi) in f.iter_mut().enumerate() {
            *fi += tree.predict(x.row(i));
        }
        stage_losses.push(mean_loss(&f));
        trees.push(tree);
    }
    Ok(GbmFit {
        model: GbmModel {
            init,
            trees,
            n_features: x.cols,
        },
        stage_losses,
    })
}

/// Gradient boosting over embedding-averaged history features.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbedGbm {
    table: std::sync::Arc<EmbeddingTable>,
    model: GbmModel,
}

impl EmbedGbm {
    pub fn new(table: std::sync::Arc<EmbeddingTable>, model: GbmModel) -> Result<Self> {
        if model.n_features != feature_len(table.dim()) {
            return Err(Error::Dimension(format!(
                "gbm expects {} features, the embedding table gives {}",
                model.n_features,
                feature_len(table.dim())
            )));
        }
        Ok(EmbedGbm { table, model })
    }

    pub fn table(&self) -> &std::sync::Arc<EmbeddingTable> {
        &self.table
    }

    pub fn model(&self) -> &GbmModel {
        &self.model
    }

    pub fn predict_proba(&self, history: &PatientHistory) -> f64 {
        self.model.predict_proba(&featurize_history(history, &self.table))
    }
}

pub fn train_embed_gbm(
    train: &[LabeledExample],
    table: std::sync::Arc<EmbeddingTable>,
    config: &GbmConfig,
) -> Result<(EmbedGbm, GbmFit)> {
    if train.is_empty() {
        return Err(Error::Empty("embed-gbm training set"));
    }
    let rows = exec::map(config.execution, train, |e| featurize_history(&e.history, &table));
    let x = Matrix::from_rows(&rows)?;
    let y: Vec<f64> = train.iter().map(|e| e.label.as_f64()).collect();
    let fit = train_gbm(&x, &y, config)?;
    Ok((EmbedGbm::new(table, fit.model.clone())?, fit))
}
