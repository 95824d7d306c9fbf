#![allow(dead_code)]

use std::sync::Arc;

use claims_ssl::claims::{parse_code, AgeBuckets, Claim, CodeSystem, Label, LabeledExample, MedicalCode, PatientHistory, Sex};
use claims_ssl::narrative::{build_vocab, Vocabulary};

pub fn dx(value: &str) -> MedicalCode {
    parse_code(CodeSystem::Diagnosis, value).unwrap()
}

pub fn px(value: &str) -> MedicalCode {
    parse_code(CodeSystem::Procedure, value).unwrap()
}

pub fn history(id: &str, age: u32, sex: Sex, dxs: &[&str], pxs: &[&str]) -> PatientHistory {
    let claims = if dxs.is_empty() && pxs.is_empty() {
        vec![]
    } else {
        vec![Claim::new(
            format!("{id}-1"),
            "2019-05-01".parse().unwrap(),
            dxs.iter().map(|c| dx(c)).collect(),
            None,
            pxs.iter().map(|c| px(c)).collect(),
            vec![],
            false,
        )
        .unwrap()]
    };
    PatientHistory::new(id, age, sex, claims, None)
}

pub fn example(history: PatientHistory, positive: bool) -> LabeledExample {
    LabeledExample {
        history,
        label: if positive { Label::Hospitalized } else { Label::NotHospitalized },
    }
}

pub fn vocab_of(histories: &[PatientHistory]) -> Arc<Vocabulary> {
    Arc::new(build_vocab(histories, 1, &AgeBuckets::default()).unwrap())
}

/// Mann-Whitney AUC with average ranks for ties.
pub fn auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut v: Vec<(f64, bool)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    let npos = labels.iter().filter(|&&l| l).count() as f64;
    let nneg = labels.len() as f64 - npos;
    let (mut rank_sum, mut i) = (0.0, 0);
    while i < v.len() {
        let mut j = i;
        while j < v.len() && v[j].0 == v[i].0 {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        rank_sum += v[i..j].iter().filter(|x| x.1).count() as f64 * r;
        i = j;
    }
    (rank_sum - npos * (npos + 1.0) / 2.0) / (npos * nneg)
}

/// Norm-wise relative error `|a - b| / max(|a|, |b|)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-300)
}
