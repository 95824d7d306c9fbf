use std::collections::BTreeMap;

use proptest::prelude::*;

use super::*;
use crate::claims::{parse_code, AgeBuckets, Claim, CodeSystem, MedicalCode, PatientHistory, Sex};

fn dx(c: &str) -> MedicalCode {
    parse_code(CodeSystem::Diagnosis, c).unwrap()
}

fn claim(id: &str, date: &str, dxs: &[&str], pxs: &[&str]) -> Claim {
    Claim::new(
        id,
        date.parse().unwrap(),
        dxs.iter().map(|c| dx(c)).collect(),
        None,
        pxs.iter().map(|c| parse_code(CodeSystem::Procedure, c).unwrap()).collect(),
        vec![],
        false,
    )
    .unwrap()
}

fn patient(claims: Vec<Claim>) -> PatientHistory {
    PatientHistory::new("p", 65, Sex::F, claims, None)
}

#[test]
fn min_count_threshold() {
    let claims = (0..5).map(|i| claim(&format!("c{i}"), "2019-01-01", &["R062", "E119"], &[])).collect::<Vec<_>>();
    let mut corpus = vec![patient(claims)];
    corpus.push(patient(vec![claim("z", "2019-01-02", &["E119"], &[])]));
    let ages = AgeBuckets::default();
    let v = build_vocab(&corpus, 6, &ages).unwrap();
    assert_eq!(v.get("DX_R062"), None);
    assert_eq!(v.id("DX_R062"), UNK_ID);
    assert!(v.get("DX_E119").is_some());
    let v5 = build_vocab(&corpus, 5, &ages).unwrap();
    assert!(v5.get("DX_R062").is_some());
}

#[test]
fn toy_vocabulary_size() {
    // One claim with three codes: 3 code tokens, 4 specials, 9 age and 2 sex tokens.
    let corpus = vec![patient(vec![claim("a", "2019-01-01", &["R062", "J189"], &["99214"])])];
    let v = build_vocab(&corpus, 1, &AgeBuckets::default()).unwrap();
    assert_eq!(v.len(), 3 + 4 + 9 + 2);
    assert_eq!(v.surface(0), PAD);
    assert_eq!(v.surface(1), UNK);
    assert_eq!(v.surface(2), CLS);
    assert_eq!(v.surface(3), MASK);
    // Ties at frequency 1 are ordered by surface; the observed demographics
    // share that frequency.
    let order: Vec<&str> = (4..9).map(|i| v.surface(i)).collect();
    assert_eq!(order, ["AGE_65-78", "DX_J189", "DX_R062", "PX_99214", "SEX_F"]);
    assert_eq!(v.frequency(v.id("SEX_M")), 0);
}

#[test]
fn vocabulary_is_deterministic_and_round_trips() {
    let corpus = vec![
        patient(vec![claim("a", "2019-01-01", &["R062", "J189"], &["99214"])]),
        patient(vec![claim("b", "2019-02-01", &["J189"], &["A7003", "99214"])]),
    ];
    let ages = AgeBuckets::default();
    let a = build_vocab(&corpus, 1, &ages).unwrap();
    let b = build_vocab(&corpus, 1, &ages).unwrap();
    assert_eq!(a.to_tsv(), b.to_tsv());
    assert_eq!(a.fingerprint(), b.fingerprint());
    let back = Vocabulary::parse_tsv(&a.to_tsv()).unwrap();
    assert_eq!(back.to_tsv(), a.to_tsv());
    assert_eq!(back.age_buckets(), &ages);
    assert_eq!(back.min_count(), 1);
    for id in 0..a.len() as u32 {
        if id != UNK_ID {
            assert_eq!(a.id(a.surface(id)), id);
        }
    }
}

#[test]
fn vocabulary_file_errors() {
    assert!(build_vocab(&[], 1, &AgeBuckets::default()).is_err());
    assert!(Vocabulary::parse_tsv("0\t[PAD]\t0\n2\t[UNK]\t0\n").is_err());
    assert!(Vocabulary::parse_tsv("0\t[UNK]\t0\n").is_err());
    let err = Vocabulary::parse_tsv("0\t[PAD]\t0\n1\t[UNK]\n").unwrap_err();
    assert!(err.to_string().contains("line 2"), "{err}");
}

fn toy_vocab() -> Vocabulary {
    let corpus = vec![patient(vec![claim(
        "a",
        "2019-01-01",
        &["R062", "J189", "E119"],
        &["99214", "A7003"],
    )])];
    build_vocab(&corpus, 1, &AgeBuckets::default()).unwrap()
}

#[test]
fn singleton_claim_tokens() {
    let v = toy_vocab();
    let c = claim("x", "2019-01-01", &["R062"], &[]);
    let seq = tokenize_claim(&c, 65, Sex::F, &v, 99);
    assert_eq!(seq.surfaces(&v), ["AGE_65-78", "SEX_F", "DX_R062"]);
    assert_eq!(seq.provenance[2].claim_id.as_deref(), Some("x"));
    assert_eq!(seq.provenance[0].kind, TokenKind::Age);
    let unknown = claim("y", "2019-01-01", &["Q999"], &[]);
    assert_eq!(tokenize_claim(&unknown, 65, Sex::F, &v, 1).ids[2], UNK_ID);
}

#[test]
fn shuffle_is_seeded() {
    let v = toy_vocab();
    let c = claim("x", "2019-01-01", &["R062", "J189", "E119"], &["99214", "A7003"]);
    let a = tokenize_claim(&c, 65, Sex::F, &v, 7);
    assert_eq!(a, tokenize_claim(&c, 65, Sex::F, &v, 7));
    // With 5 codes, two independent shuffles coincide with probability 1/120.
    let n = 6_000u64;
    let mut same = 0;
    for s in 0..n {
        let x = tokenize_claim(&c, 65, Sex::F, &v, s);
        let y = tokenize_claim(&c, 65, Sex::F, &v, s + 1_000_000);
        let mut xs = x.ids.clone();
        let mut ys = y.ids.clone();
        if x.ids == y.ids {
            same += 1;
        }
        xs.sort_unstable();
        ys.sort_unstable();
        assert_eq!(xs, ys);
    }
    let rate = same as f64 / n as f64;
    // Expected 1/120 ≈ 0.0083, sd ≈ 0.0012.
    assert!((rate - 1.0 / 120.0).abs() < 0.005, "{rate}");
}

#[test]
fn history_sequences() {
    let v = toy_vocab();
    let empty = tokenize_history(&patient(vec![]), &v, 10);
    assert_eq!(empty.surfaces(&v), ["[CLS]", "AGE_65-78", "SEX_F"]);

    let h = patient(vec![
        claim("late", "2019-06-01", &["E119"], &["A7003"]),
        claim("early", "2019-01-01", &["R062", "J189"], &[]),
    ]);
    let seq = tokenize_history(&h, &v, 10);
    assert_eq!(seq.len(), 7);
    assert_eq!(
        seq.surfaces(&v),
        ["[CLS]", "AGE_65-78", "SEX_F", "DX_R062", "DX_J189", "DX_E119", "PX_A7003"]
    );
    assert_eq!(seq.provenance[3].claim_id.as_deref(), Some("early"));

    let truncated = tokenize_history(&h, &v, 5);
    assert_eq!(truncated.len(), 5);
    assert_eq!(truncated.surfaces(&v), ["[CLS]", "AGE_65-78", "SEX_F", "DX_E119", "PX_A7003"]);
    assert_eq!(tokenize_history(&h, &v, 5), truncated);
}

#[test]
fn pretraining_sequences_cover_every_claim() {
    let v = toy_vocab();
    let corpus = vec![
        patient(vec![claim("a", "2019-01-01", &["R062"], &[]), claim("b", "2019-01-02", &["J189"], &["99214"])]),
        patient(vec![claim("c", "2019-01-03", &["E119"], &[])]),
    ];
    let seqs = pretraining_sequences(&corpus, &v, 3);
    assert_eq!(seqs.len(), 3);
    assert_eq!(seqs, pretraining_sequences(&corpus, &v, 3));
    assert_eq!(seqs[1].len(), 4);
}

proptest! {
    #[test]
    fn claim_token_multiset_is_seed_independent(seed_a in any::<u64>(), seed_b in any::<u64>()) {
        let v = toy_vocab();
        let c = claim("x", "2019-01-01", &["R062", "J189", "E119"], &["99214", "A7003"]);
        let count = |s| {
            let mut m = BTreeMap::new();
            for id in tokenize_claim(&c, 30, Sex::M, &v, s).ids {
                *m.entry(id).or_insert(0) += 1;
            }
            m
        };
        prop_assert_eq!(count(seed_a), count(seed_b));
    }
}
