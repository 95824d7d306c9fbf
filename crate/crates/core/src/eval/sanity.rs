use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::claims::{Claim, CodeSystem, MedicalCode, PatientHistory, RiskFactorMap, Sex};
use crate::error::{Error, Result};
use crate::models::ProbabilityModel;
use crate::narrative::{code_of_surface, TokenKind, Vocabulary};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SanityConfig {
    pub variations: usize,
    pub seed: u64,
}

impl Default for SanityConfig {
    fn default() -> Self {
        SanityConfig { variations: 20, seed: 29 }
    }
}

/// Paired probe histories: `high_risk[i]` carries one code from every risk
/// condition, `no_risk[i]` as many non-risk codes of the same kinds, and
/// `empty[i]` only the demographics. All three share age and sex.
#[derive(Clone, Debug)]
pub struct SanityProbes {
    pub high_risk: Vec<PatientHistory>,
    pub no_risk: Vec<PatientHistory>,
    pub empty: Vec<PatientHistory>,
    /// Risk conditions with no matching code in the vocabulary.
    pub uncovered: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SanityRow {
    pub model: String,
    pub high_risk_mean: f64,
    pub no_risk_mean: f64,
    pub empty_mean: f64,
    /// Share of high-risk probes scored above 0.5, in percent.
    pub high_risk_positive: f64,
}

impl SanityRow {
    pub fn margin(&self) -> f64 {
        self.high_risk_mean - self.no_risk_mean
    }
}

const ANCHOR: (i32, u32, u32) = (2021, 1, 15);

fn probe(id: String, age: u32, sex: Sex, codes: &[MedicalCode], anchor: NaiveDate) -> PatientHistory {
    let claims = codes
        .iter()
        .enumerate()
        .map(|(i, code)| {
            let date = anchor - Days::new(14 + 21 * i as u64);
            let (mut dx, mut px, mut rx) = (Vec::new(), Vec::new(), Vec::new());
            match code.system() {
                CodeSystem::Diagnosis => dx.push(code.clone()),
                CodeSystem::Procedure => px.push(code.clone()),
                CodeSystem::Medication => rx.push(code.clone()),
            }
            let primary = dx.first().cloned();
            Claim::new(format!("{id}-{i}"), date, dx, primary, px, rx, false).expect("one code per claim")
        })
        .collect();
    PatientHistory::new(id, age, sex, claims, Some(anchor))
}

pub fn sanity_probes(map: &RiskFactorMap, vocab: &Vocabulary, config: &SanityConfig) -> Result<SanityProbes> {
    if config.variations == 0 {
        return Err(Error::Config("sanity: variations must be positive".into()));
    }
    let codes_of = |system: CodeSystem| -> Vec<MedicalCode> {
        vocab
            .ids_of_kind(TokenKind::of_system(system))
            .filter_map(|id| code_of_surface(vocab.surface(id)))
            .collect()
    };
    let by_system: Vec<(CodeSystem, Vec<MedicalCode>)> = [CodeSystem::Diagnosis, CodeSystem::Procedure, CodeSystem::Medication]
        .into_iter()
        .map(|s| (s, codes_of(s)))
        .collect();
    let pool = |s: CodeSystem| &by_system.iter().find(|(t, _)| *t == s).expect("all systems listed").1;

    let mut candidates: Vec<Vec<&MedicalCode>> = Vec::new();
    let mut uncovered = Vec::new();
    for (risk, name) in map.names().iter().enumerate() {
        let hits: Vec<&MedicalCode> = map
            .entries_for(risk)
            .flat_map(|e| pool(e.system).iter().filter(move |c| e.matches(c)))
            .collect();
        if hits.is_empty() {
            uncovered.push(name.clone());
        } else {
            candidates.push(hits);
        }
    }
    if candidates.is_empty() {
        return Err(Error::Empty("no risk condition has a code in the vocabulary"));
    }
    let clean: Vec<(CodeSystem, Vec<&MedicalCode>)> = by_system
        .iter()
        .map(|(s, codes)| (*s, codes.iter().filter(|c| !map.is_risk_code(c)).collect()))
        .collect();

    let anchor = NaiveDate::from_ymd_opt(ANCHOR.0, ANCHOR.1, ANCHOR.2).expect("valid date");
    let mut rng = Rng::new(config.seed);
    let mut probes = SanityProbes {
        high_risk: Vec::new(),
        no_risk: Vec::new(),
        empty: Vec::new(),
        uncovered,
    };
    for v in 0..config.variations {
        let age = rng.range_inclusive(19, 95) as u32;
        let sex = if rng.bernoulli(0.5) { Sex::M } else { Sex::F };
        let mut high: Vec<MedicalCode> = candidates.iter().map(|hits| (*rng.choose(hits).expect("non-empty")).clone()).collect();
        rng.shuffle(&mut high);
        let low: Vec<MedicalCode> = high
            .iter()
            .map(|c| {
                let pool = &clean.iter().find(|(s, _)| *s == c.system()).expect("all systems listed").1;
                rng.choose(pool).map_or_else(|| c.clone(), |&x| x.clone())
            })
            .collect();
        probes.high_risk.push(probe(format!("sanity-high-{v}"), age, sex, &high, anchor));
        probes.no_risk.push(probe(format!("sanity-none-{v}"), age, sex, &low, anchor));
        probes.empty.push(probe(format!("sanity-empty-{v}"), age, sex, &[], anchor));
    }
    Ok(probes)
}

fn mean_of<M: ProbabilityModel + ?Sized>(model: &M, hs: &[PatientHistory]) -> f64 {
    hs.iter().map(|h| model.predict_proba(h)).sum::<f64>() / hs.len() as f64
}

/// Mean probabilities of each model on the probe sets.
pub fn highrisk_sanity_check(
    models: &[(&str, &dyn ProbabilityModel)],
    map: &RiskFactorMap,
    vocab: &Vocabulary,
    config: &SanityConfig,
) -> Result<Vec<SanityRow>> {
    let probes = sanity_probes(map, vocab, config)?;
    Ok(models
        .iter()
        .map(|(name, model)| SanityRow {
            model: name.to_string(),
            high_risk_mean: mean_of(*model, &probes.high_risk),
            no_risk_mean: mean_of(*model, &probes.no_risk),
            empty_mean: mean_of(*model, &probes.empty),
            high_risk_positive: 100.0
                * probes.high_risk.iter().filter(|h| model.predict(h)).count() as f64
                / probes.high_risk.len() as f64,
        })
        .collect())
}
