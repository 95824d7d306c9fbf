use std::collections::{BTreeMap, BTreeSet};

use super::*;
use crate::claims::corpus::to_json_line;
use crate::claims::{parse_code, Claim, CodeSystem, PatientHistory, RiskFactorMap, Sex};
use crate::exec::Execution;
use crate::math::sigmoid;

fn small(seed: u64) -> GeneratorConfig {
    let mut cfg = GeneratorConfig::uncalibrated(seed, &RiskFactorMap::default());
    cfg.intercept = -3.0;
    cfg.n_patients = 2_000;
    cfg.n_pretrain_claims = 5_000;
    cfg
}

#[test]
fn corpora_are_deterministic() {
    let cfg = small(11);
    let g = Generator::new(&cfg).unwrap();
    let a: Vec<String> = g
        .generate_pretrain_corpus(Execution::Sequential)
        .iter()
        .map(to_json_line)
        .collect();
    let b: Vec<String> = Generator::new(&cfg)
        .unwrap()
        .generate_pretrain_corpus(Execution::Parallel)
        .iter()
        .map(to_json_line)
        .collect();
    assert_eq!(a, b);
    let ca: Vec<String> = g
        .generate_raw_cohort(Execution::Parallel)
        .iter()
        .map(|r| to_json_line(&r.record))
        .collect();
    let cb: Vec<String> = g
        .generate_raw_cohort(Execution::Sequential)
        .iter()
        .map(|r| to_json_line(&r.record))
        .collect();
    assert_eq!(ca, cb);
    let other = Generator::new(&small(12)).unwrap();
    assert_ne!(to_json_line(&other.cohort_record(0).record), ca[0]);
}

#[test]
fn pretrain_corpus_has_exact_claim_count() {
    let cfg = small(5);
    let corpus = generate_pretrain_corpus(&cfg, Execution::Parallel).unwrap();
    let total: usize = corpus.iter().map(|h| h.claims.len()).sum();
    assert_eq!(total, cfg.n_pretrain_claims);
    assert!(corpus.iter().all(|h| h.anchor_date.is_none() && !h.claims.is_empty()));
}

#[test]
fn zero_noise_single_profile_emits_only_profile_codes() {
    let mut cfg = small(3);
    cfg.profiles.truncate(1);
    cfg.profiles[0].base_prevalence = 0.5;
    cfg.noise_code_rate = 0.0;
    let pool: BTreeSet<&str> = cfg.profiles[0]
        .dx_pool
        .iter()
        .chain(&cfg.profiles[0].px_pool)
        .chain(&cfg.profiles[0].rx_pool)
        .map(String::as_str)
        .collect();
    let corpus = generate_pretrain_corpus(&cfg, Execution::Parallel).unwrap();
    assert!(!corpus.is_empty());
    for h in &corpus {
        for c in h.codes() {
            assert!(pool.contains(c.value()), "{c}");
        }
    }
}

#[test]
fn prevalence_is_respected() {
    let mut cfg = small(21);
    cfg.n_patients = 10_000;
    cfg.profiles[4].base_prevalence = 0.3;
    let g = Generator::new(&cfg).unwrap();
    let records = g.generate_raw_cohort(Execution::Parallel);
    let with = records
        .iter()
        .filter(|r| g.active_conditions(&r.record).unwrap().contains(&4))
        .count();
    let frac = with as f64 / records.len() as f64;
    // Binomial sd at n = 10,000 is 0.0046; ±0.02 is over 4 sd.
    assert!((frac - 0.3).abs() < 0.02, "{frac}");
    // Codes recover exactly the drawn conditions.
    for r in &records {
        assert_eq!(g.active_conditions(&r.record).unwrap(), r.draw.active);
    }
}

#[test]
fn default_config_hits_target_rate() {
    let cfg = GeneratorConfig::default();
    assert_eq!(cfg.n_patients, 50_000);
    let g = Generator::new(&cfg).unwrap();
    let raw = g.generate_raw_cohort(Execution::Parallel);
    let cohort = crate::claims::build_cohort(raw.iter().map(|r| &r.record), &cfg.covid_code_set().unwrap());
    let rate = cohort.positive_rate();
    assert!((rate - 0.15).abs() < 0.01, "{rate}");
    assert!(cohort.n_indeterminate > 0);
    let mean_oracle = raw.iter().map(|r| r.probability).sum::<f64>() / raw.len() as f64;
    assert!((rate - mean_oracle).abs() < 0.01, "{rate} vs {mean_oracle}");
}

#[test]
fn null_effects_give_sigmoid_intercept_rate() {
    let mut cfg = small(8);
    cfg.n_patients = 20_000;
    for p in &mut cfg.profiles {
        p.log_odds_hospitalization = 0.0;
    }
    cfg.age_coef = 0.0;
    cfg.sex_coef = 0.0;
    cfg.intercept = -1.0;
    let cohort = generate_labeled_cohort(&cfg, Execution::Parallel).unwrap();
    let expected = sigmoid(-1.0);
    // sd ≈ sqrt(0.197/20,000) ≈ 0.0031.
    assert!((cohort.positive_rate() - expected).abs() < 0.0125, "{}", cohort.positive_rate());
}

fn history_with(codes: &[&str]) -> PatientHistory {
    let claims = codes
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let code = parse_code(CodeSystem::Diagnosis, c).unwrap();
            Claim::new(format!("x{i}"), "2019-05-01".parse().unwrap(), vec![code], None, vec![], vec![], false).unwrap()
        })
        .collect();
    PatientHistory::new("x", 30, Sex::F, claims, None)
}

#[test]
fn oracle_examples() {
    let mut cfg = small(2);
    cfg.profiles.truncate(2);
    cfg.age_coef = 0.0;
    cfg.sex_coef = 0.0;
    cfg.intercept = 0.0;
    cfg.profiles[0].log_odds_hospitalization = 2.0;
    cfg.profiles[1].log_odds_hospitalization = 0.7;
    let g = Generator::new(&cfg).unwrap();
    assert_eq!(g.oracle_probability(&history_with(&[])).unwrap(), 0.5);

    cfg.intercept = -3.0;
    let g = Generator::new(&cfg).unwrap();
    let one = history_with(&[&cfg.profiles[0].dx_pool[0]]);
    let p = g.oracle_probability(&one).unwrap();
    assert!((p - 0.268_941_421_369_995_1).abs() < 1e-12, "{p}");
    assert!((g.oracle_probability(&history_with(&[])).unwrap() - 0.047_425_873_177_566_78).abs() < 1e-12);

    let two = history_with(&[&cfg.profiles[0].dx_pool[0], &cfg.profiles[1].dx_pool[3]]);
    assert!(g.oracle_probability(&two).unwrap() >= p);

    let err = g.oracle_probability(&history_with(&["E119", "Q999"])).unwrap_err();
    assert!(matches!(err, crate::Error::NotAttributable { .. }), "{err}");
}

#[test]
fn oracle_matches_generation_after_filtering() {
    let cfg = small(31);
    let g = Generator::new(&cfg).unwrap();
    let covid = cfg.covid_code_set().unwrap();
    for i in 0..500 {
        let r = g.cohort_record(i);
        if let Some(ex) = crate::claims::preprocess(&r.record, &covid) {
            let p = g.oracle_probability(&ex.history).unwrap();
            assert_eq!(p, r.probability);
            // No symptom or COVID code survives the leakage filter.
            for c in ex.history.codes() {
                assert!(g.profile_of(c).is_some() || g.is_noise(c), "{c}");
            }
        }
    }
}

#[test]
fn within_profile_codes_co_occur_more() {
    let mut cfg = small(17);
    cfg.n_pretrain_claims = 10_000;
    let g = Generator::new(&cfg).unwrap();
    let corpus = g.generate_pretrain_corpus(Execution::Parallel);
    let mut pair_counts: BTreeMap<(String, String), usize> = BTreeMap::new();
    for claim in corpus.iter().flat_map(|h| &h.claims) {
        let codes: Vec<String> = claim.codes().map(|c| format!("{:?}{}", c.system(), c)).collect();
        for i in 0..codes.len() {
            for j in i + 1..codes.len() {
                let (a, b) = if codes[i] < codes[j] { (&codes[i], &codes[j]) } else { (&codes[j], &codes[i]) };
                *pair_counts.entry((a.clone(), b.clone())).or_default() += 1;
            }
        }
    }
    // Exhaustive over every pair of profile codes.
    let tagged: Vec<(String, usize)> = cfg
        .profiles
        .iter()
        .enumerate()
        .flat_map(|(i, p)| {
            p.dx_pool.iter().map(|c| format!("Diagnosis{c}"))
                .chain(p.px_pool.iter().map(|c| format!("Procedure{c}")))
                .chain(p.rx_pool.iter().map(|c| format!("Medication{c}")))
                .map(move |c| (c, i))
                .collect::<Vec<_>>()
        })
        .collect();
    let (mut within, mut n_within, mut cross, mut n_cross) = (0usize, 0usize, 0usize, 0usize);
    for i in 0..tagged.len() {
        for j in i + 1..tagged.len() {
            let (a, b) = if tagged[i].0 < tagged[j].0 { (&tagged[i].0, &tagged[j].0) } else { (&tagged[j].0, &tagged[i].0) };
            let n = pair_counts.get(&(a.clone(), b.clone())).copied().unwrap_or(0);
            if tagged[i].1 == tagged[j].1 {
                within += n;
                n_within += 1;
            } else {
                cross += n;
                n_cross += 1;
            }
        }
    }
    let (w, c) = (within as f64 / n_within as f64, cross as f64 / n_cross as f64);
    assert!(w > c, "within {w} cross {c}");
    assert_eq!(c, 0.0);
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = small(1);
    let dup = cfg.profiles[0].dx_pool[0].clone();
    cfg.profiles[1].dx_pool.push(dup);
    assert!(Generator::new(&cfg).is_err());
    let mut cfg = small(1);
    cfg.profiles[0].base_prevalence = 1.0;
    assert!(Generator::new(&cfg).is_err());
    let mut cfg = small(1);
    cfg.profiles[0].rx_pool.clear();
    assert!(Generator::new(&cfg).is_err());
    let mut cfg = small(1);
    cfg.noise_code_rate = 1.5;
    assert!(Generator::new(&cfg).is_err());
}
