use serde::{Deserialize, Serialize};

use crate::claims::LabeledExample;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub stratify_by_label: bool,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.7,
            stratify_by_label: true,
            seed: 7,
        }
    }
}

/// Splits positions `0..labels.len()` into (train, test) index lists, each
/// in ascending order.
///
/// Stratified splits size each class by largest remainder: every class gets
/// `floor(n_c * fraction)` and the leftover slots up to
/// `round(n * fraction)` go to the classes with the largest fractional
/// parts (ties to the negative class).
pub fn split_indices(labels: &[bool], fraction: f64, stratify: bool, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Invalid(format!(
            "train fraction {fraction} leaves an empty train or test set"
        )));
    }
    let n = labels.len();
    let n_train = (n as f64 * fraction).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::Invalid(format!(
            "{n} examples at fraction {fraction} leave an empty train or test set"
        )));
    }
    let mut rng = Rng::derived(seed, 0x5e1, 0);
    let mut train = Vec::with_capacity(n_train);
    if stratify {
        let classes: [Vec<usize>; 2] = [
            (0..n).filter(|&i| !labels[i]).collect(),
            (0..n).filter(|&i| labels[i]).collect(),
        ];
        for (c, members) in classes.iter().enumerate() {
            if members.len() < 2 {
                return Err(Error::Invalid(format!(
                    "stratified split needs at least 2 examples per class; class {} has {}",
                    c == 1,
                    members.len()
                )));
            }
        }
        let exact: Vec<f64> = classes.iter().map(|m| m.len() as f64 * fraction).collect();
        let mut quota: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
        let mut order = [0usize, 1];
        order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
        let mut left = n_train - quota.iter().sum::<usize>();
        for &c in order.iter().cycle() {
            if left == 0 {
                break;
            }
            if quota[c] < classes[c].len() {
                quota[c] += 1;
                left -= 1;
            }
        }
        for (members, &q) in classes.iter().zip(&quota) {
            let mut shuffled = members.clone();
            rng.shuffle(&mut shuffled);
            train.extend_from_slice(&shuffled[..q]);
        }
    } else {
        let mut all: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut all);
        train.extend_from_slice(&all[..n_train]);
    }
    train.sort_unstable();
    let mut in_train = vec![false; n];
    for &i in &train {
        in_train[i] = true;
    }
    let test = (0..n).filter(|&i| !in_train[i]).collect();
    Ok((train, test))
}

/// Disjoint, exhaustive train/test partition; both sides keep input order.
pub fn split_train_test(
    examples: &[LabeledExample],
    spec: &SplitSpec,
) -> Result<(Vec<LabeledExample>, Vec<LabeledExample>)> {
    let labels: Vec<bool> = examples.iter().map(|e| e.label.is_positive()).collect();
    let (train, test) = split_indices(&labels, spec.train_fraction, spec.stratify_by_label, spec.seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| examples[i].clone()).collect();
    Ok((pick(&train), pick(&test)))
}
