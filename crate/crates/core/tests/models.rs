mod common;


use claims_ssl::claims::{AgeBuckets, RiskFactorMap, Sex};
use claims_ssl::math::{logit, sigmoid};
use claims_ssl::models::gbm::{fit_regression_tree, Node};
use claims_ssl::models::logit::{fit_logistic, logistic_objective};
use claims_ssl::models::svm::{code_presence, fit_platt, svm_objective, svm_subgradient};
use claims_ssl::models::*;
use claims_ssl::rng::Rng;
use claims_ssl::{Error, Execution};
use common::*;
use proptest::prelude::*;

#[test]
fn stratified_split_counts() {
    let examples: Vec<_> = (0..10)
        .map(|i| example(history(&format!("p{i}"), 40, Sex::F, &["A000"], &[]), i < 3))
        .collect();
    let spec = SplitSpec::default();
    let (train, test) = split_train_test(&examples, &spec).unwrap();
    assert_eq!((train.len(), test.len()), (7, 3));
    assert_eq!(train.iter().filter(|e| e.label.is_positive()).count(), 2);
    let (train2, _) = split_train_test(&examples, &spec).unwrap();
    assert_eq!(train, train2);
    let all = SplitSpec { train_fraction: 1.0, ..spec.clone() };
    assert!(split_train_test(&examples, &all).is_err());
    let lonely: Vec<_> = (0..10)
        .map(|i| example(history(&format!("p{i}"), 40, Sex::F, &["A000"], &[]), i == 0))
        .collect();
    assert!(split_train_test(&lonely, &spec).is_err());
}

proptest! {
    #[test]
    fn split_is_exact_partition(labels in prop::collection::vec(any::<bool>(), 4..200), seed in any::<u64>(), frac in 0.2f64..0.9) {
        let pos = labels.iter().filter(|&&l| l).count();
        prop_assume!(pos >= 2 && labels.len() - pos >= 2);
        let Ok((train, test)) = split_indices(&labels, frac, true, seed) else { return Ok(()); };
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        let train_pos = train.iter().filter(|&&i| labels[i]).count() as f64;
        prop_assert!((train_pos - pos as f64 * frac).abs() <= 1.0);
    }
}

#[test]
fn logistic_gradient_matches_finite_differences() {
    let mut rng = Rng::new(3);
    let (n, p) = (40, 5);
    let x: Vec<f64> = (0..n * p).map(|_| rng.normal()).collect();
    let y: Vec<f64> = (0..n).map(|_| if rng.bernoulli(0.4) { 1.0 } else { 0.0 }).collect();
    let w: Vec<f64> = (0..p).map(|_| rng.normal()).collect();
    let b = 0.3;
    let l2 = 0.05;
    let (_, gw, gb) = logistic_objective(&x, &y, &w, b, l2, Execution::Sequential);
    let h = 1e-6;
    let f = |w: &[f64], b: f64| logistic_objective(&x, &y, w, b, l2, Execution::Sequential).0;
    let mut numeric = Vec::new();
    for j in 0..p {
        let (mut a, mut c) = (w.clone(), w.clone());
        a[j] += h;
        c[j] -= h;
        numeric.push((f(&a, b) - f(&c, b)) / (2.0 * h));
    }
    numeric.push((f(&w, b + h) - f(&w, b - h)) / (2.0 * h));
    let mut analytic = gw.clone();
    analytic.push(gb);
    let err = rel_err(&analytic, &numeric);
    assert!(err < 1e-6, "relative error {err}");
    // Parallel and sequential reductions agree bit for bit.
    let par = logistic_objective(&x, &y, &w, b, l2, Execution::Parallel);
    assert_eq!(par.1, gw);
}

#[test]
fn risk_logit_fits_separable_and_constant_data() {
    let map = RiskFactorMap::default();
    let ages = AgeBuckets::default();
    // E119 is a diabetes risk code; the label equals that bit.
    let train: Vec<_> = (0..60)
        .map(|i| {
            let sick = i % 3 == 0;
            let codes: &[&str] = if sick { &["E119", "Z0000"] } else { &["Z0000"] };
            example(history(&format!("p{i}"), 30 + i as u32 % 40, Sex::F, codes, &[]), sick)
        })
        .collect();
    let model = train_risk_logit(&train, &map, &ages, &LogitConfig::default()).unwrap();
    let acc = train.iter().filter(|e| (model.predict_proba(&e.history) >= 0.5) == e.label.is_positive()).count();
    assert_eq!(acc, train.len());
    let diabetes = map.names().iter().position(|n| n == "diabetes").unwrap();
    assert!(model.weights()[diabetes] > 0.0);

    let x = vec![0.0; 50 * 3];
    let y: Vec<f64> = (0..50).map(|i| if i < 10 { 1.0 } else { 0.0 }).collect();
    let fit = fit_logistic(&x, &y, &LogitConfig::default()).unwrap();
    assert!(fit.converged);
    assert!((sigmoid(fit.intercept) - 0.2).abs() < 1e-5);

    let zero = RiskLogit::from_parts(map.clone(), ages, vec![0.0; map.len() + 2], 0.0).unwrap();
    assert_eq!(zero.predict_proba(&train[0].history), 0.5);
}

#[test]
fn svm_subgradient_matches_finite_differences_off_kinks() {
    let mut rng = Rng::new(9);
    let dim = 12;
    let rows: Vec<Vec<u32>> = (0..30)
        .map(|_| {
            let mut r: Vec<u32> = (0..dim as u32).filter(|_| rng.bernoulli(0.3)).collect();
            r.dedup();
            r
        })
        .collect();
    let y: Vec<f64> = (0..30).map(|_| if rng.bernoulli(0.5) { 1.0 } else { -1.0 }).collect();
    let lambda = 0.01;
    let (w, b) = loop {
        let w: Vec<f64> = (0..dim).map(|_| rng.normal() * 0.5).collect();
        let b = rng.normal() * 0.1;
        let off_kink = rows.iter().zip(&y).all(|(r, &yi)| {
            let m = b + r.iter().map(|&j| w[j as usize]).sum::<f64>();
            (1.0 - yi * m).abs() > 1e-3
        });
        if off_kink {
            break (w, b);
        }
    };
    let (gw, gb) = svm_subgradient(&rows, &y, &w, b, lambda);
    let h = 1e-6;
    let f = |w: &[f64], b: f64| svm_objective(&rows, &y, w, b, lambda);
    let mut numeric = Vec::new();
    for j in 0..dim {
        let (mut a, mut c) = (w.clone(), w.clone());
        a[j] += h;
        c[j] -= h;
        numeric.push((f(&a, b) - f(&c, b)) / (2.0 * h));
    }
    numeric.push((f(&w, b + h) - f(&w, b - h)) / (2.0 * h));
    let mut analytic = gw;
    analytic.push(gb);
    let err = rel_err(&analytic, &numeric);
    assert!(err < 1e-5, "relative error {err}");
}

fn svm_toy() -> Vec<claims_ssl::claims::LabeledExample> {
    let mut rng = Rng::new(21);
    let filler = ["A000", "A001", "A002", "A003", "A004", "A005"];
    (0..400)
        .map(|i| {
            let positive = rng.bernoulli(0.3);
            let mut codes: Vec<&str> = filler.iter().copied().filter(|_| rng.bernoulli(0.4)).collect();
            if positive {
                codes.push("J449");
            }
            if codes.is_empty() {
                codes.push("A000");
            }
            example(history(&format!("p{i}"), 50, Sex::M, &codes, &[]), positive)
        })
        .collect()
}

#[test]
fn svm_weights_and_calibration() {
    let train = svm_toy();
    let vocab = vocab_of(&train.iter().map(|e| e.history.clone()).collect::<Vec<_>>());
    let config = SvmConfig::default();
    let model = train_bow_svm(&train, vocab.clone(), &config).unwrap();
    let key = vocab.get("DX_J449").unwrap() as usize;
    let top = (0..vocab.len())
        .max_by(|&a, &b| model.weights()[a].abs().total_cmp(&model.weights()[b].abs()))
        .unwrap();
    assert_eq!(top, key);
    assert!(model.weights()[key] > 0.0);

    // The calibration fold is the held-out part of the internal split.
    let labels: Vec<bool> = train.iter().map(|e| e.label.is_positive()).collect();
    let (_, cal) = split_indices(&labels, 1.0 - config.calibration_fraction, true, config.seed).unwrap();
    let mean_p = cal.iter().map(|&i| model.predict_proba(&train[i].history)).sum::<f64>() / cal.len() as f64;
    let rate = cal.iter().filter(|&&i| labels[i]).count() as f64 / cal.len() as f64;
    assert!((mean_p - rate).abs() <= 0.05, "mean {mean_p} rate {rate}");

    let one_class: Vec<_> = train.iter().filter(|e| e.label.is_positive()).cloned().collect();
    assert!(train_bow_svm(&one_class, vocab, &config).is_err());
}

#[test]
fn platt_recovers_known_sigmoid() {
    let mut rng = Rng::new(2);
    let (a, b) = (-2.0, 0.5);
    let scores: Vec<f64> = (0..20_000).map(|_| rng.normal()).collect();
    let labels: Vec<bool> = scores.iter().map(|&f| rng.bernoulli(sigmoid(-(a * f + b)))).collect();
    let (fa, fb) = fit_platt(&scores, &labels);
    assert!((fa - a).abs() < 0.1 && (fb - b).abs() < 0.1, "{fa} {fb}");
}

fn random_matrix(rng: &mut Rng, n: usize, p: usize, levels: u64) -> Matrix {
    let data = (0..n * p).map(|_| rng.below(levels) as f64 * 0.25 - 1.0).collect();
    Matrix { rows: n, cols: p, data }
}

/// Exhaustive depth-1 split: every feature, every boundary between distinct
/// sorted values, maximizing `SL^2/nL + SR^2/nR - S^2/n`.
fn oracle_split(x: &Matrix, r: &[f64], min_leaf: usize) -> Option<(usize, f64, f64)> {
    let n = x.rows;
    let total: f64 = r.iter().sum();
    let mut best: Option<(usize, f64, f64)> = None;
    for j in 0..x.cols {
        let mut vals: Vec<f64> = (0..n).map(|i| x.row(i)[j]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let (mut sl, mut nl) = (0.0, 0usize);
            for i in 0..n {
                if x.row(i)[j] <= t {
                    sl += r[i];
                    nl += 1;
                }
            }
            let nr = n - nl;
            if nl < min_leaf || nr < min_leaf {
                continue;
            }
            let sr = total - sl;
            let gain = sl * sl / nl as f64 + sr * sr / nr as f64 - total * total / n as f64;
            if best.is_none_or(|b| gain > b.2 + 1e-12) {
                best = Some((j, t, gain));
            }
        }
    }
    best.filter(|b| b.2 > 1e-12)
}

#[test]
fn depth_one_tree_matches_exhaustive_split_search() {
    let mut rng = Rng::new(77);
    let config = GbmConfig {
        max_depth: 1,
        min_samples_leaf: 3,
        execution: Execution::Sequential,
        ..GbmConfig::default()
    };
    for _ in 0..50 {
        let x = random_matrix(&mut rng, 60, 4, 9);
        let r: Vec<f64> = (0..60).map(|_| rng.normal()).collect();
        let tree = fit_regression_tree(&x, &r, &config);
        match (oracle_split(&x, &r, 3), tree.nodes[0]) {
            (Some((j, t, _)), Node::Split { feature, threshold, .. }) => {
                assert_eq!(feature, j);
                assert!((f64::from(threshold) - t).abs() < 1e-6);
            }
            (None, Node::Leaf { .. }) => {}
            (o, n) => panic!("oracle {o:?} tree {n:?}"),
        }
    }
}

#[test]
fn perfect_feature_is_chosen() {
    let mut rng = Rng::new(5);
    let mut x = random_matrix(&mut rng, 100, 3, 20);
    let y: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 1.0 } else { 0.0 }).collect();
    for i in 0..100 {
        x.data[i * 3 + 1] = y[i] * 2.0 + 0.1 * rng.uniform();
    }
    let r: Vec<f64> = y.iter().map(|v| v - 0.5).collect();
    let cfg = GbmConfig { max_depth: 1, min_samples_leaf: 1, ..GbmConfig::default() };
    match fit_regression_tree(&x, &r, &cfg).nodes[0] {
        Node::Split { feature, threshold, .. } => {
            assert_eq!(feature, 1);
            assert!(f64::from(threshold) > 0.1 && f64::from(threshold) < 2.0);
        }
        n => panic!("{n:?}"),
    }
}

#[test]
fn boosting_loss_is_monotone_and_baseline_is_base_rate() {
    let mut rng = Rng::new(8);
    for case in 0..5 {
        let x = random_matrix(&mut rng, 300, 5, 400);
        // Labels unrelated to features in odd cases: the guard still holds.
        let y: Vec<f64> = (0..300)
            .map(|i| {
                let s = if case % 2 == 0 { x.row(i)[0] * 2.0 - x.row(i)[2] } else { 0.0 };
                if rng.bernoulli(sigmoid(s)) { 1.0 } else { 0.0 }
            })
            .collect();
        let cfg = GbmConfig {
            n_trees: 30,
            learning_rate: 1.0,
            min_samples_leaf: 5,
            subsample: if case == 4 { 0.5 } else { 1.0 },
            ..GbmConfig::default()
        };
        let fit = train_gbm(&x, &y, &cfg).unwrap();
        for w in fit.stage_losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{w:?}");
        }
    }
    let x = random_matrix(&mut rng, 40, 2, 5);
    let y: Vec<f64> = (0..40).map(|i| if i < 10 { 1.0 } else { 0.0 }).collect();
    let fit = train_gbm(&x, &y, &GbmConfig { n_trees: 0, ..GbmConfig::default() }).unwrap();
    assert!((f64::from(fit.model.init) - logit(0.25)).abs() < 1e-6);
    assert!((fit.model.predict_proba(x.row(3)) - 0.25).abs() < 1e-6);
}

#[test]
fn gbm_is_identical_across_execution_modes() {
    let mut rng = Rng::new(4);
    let x = random_matrix(&mut rng, 500, 6, 1000);
    let y: Vec<f64> = (0..500).map(|i| if x.row(i)[3] > 0.0 { 1.0 } else { 0.0 }).collect();
    let seq = train_gbm(&x, &y, &GbmConfig { n_trees: 10, execution: Execution::Sequential, ..GbmConfig::default() }).unwrap();
    let par = train_gbm(&x, &y, &GbmConfig { n_trees: 10, execution: Execution::Parallel, ..GbmConfig::default() }).unwrap();
    assert_eq!(seq, par);
}

#[test]
fn code_presence_is_distinct_and_sorted() {
    let h = history("p", 40, Sex::F, &["A001", "A000", "A001", "Q999"], &[]);
    let vocab = vocab_of(&[history("q", 40, Sex::F, &["A000", "A001"], &[])]);
    let ids = code_presence(&h, &vocab);
    assert_eq!(ids.len(), 2);
    assert!(ids[0] < ids[1]);
}

#[test]
fn model_kind_names_round_trip() {
    for k in ModelKind::ALL {
        assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
    }
    assert_eq!("mlm".parse::<ModelKind>().unwrap(), ModelKind::MlmTransformer);
    assert!(matches!("svm".parse::<ModelKind>(), Err(Error::Invalid(_))));
}
