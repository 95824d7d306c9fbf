use std::collections::BTreeSet;

use chrono::{Days, Months, NaiveDate};
use serde::{Deserialize, Serialize};

use super::code::{CodeSystem, MedicalCode};
use crate::error::{Error, Result};

/// Claims dated on or within this many days before the anchor are dropped.
pub const LEAKAGE_DAYS: u64 = 7;
pub const LOOKBACK_MONTHS: u32 = 36;
/// Window after the anchor in which the absence of claims implies no
/// hospitalization.
pub const FOLLOW_UP_DAYS: u64 = 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sex {
    F,
    M,
}

impl Sex {
    pub fn indicator(self) -> f64 {
        match self {
            Sex::F => 0.0,
            Sex::M => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Claim {
    pub claim_id: String,
    pub service_date: NaiveDate,
    pub diagnoses: Vec<MedicalCode>,
    pub primary_dx: Option<MedicalCode>,
    pub procedures: Vec<MedicalCode>,
    pub medications: Vec<MedicalCode>,
    pub is_hospitalization: bool,
}

impl Claim {
    pub fn new(
        claim_id: impl Into<String>,
        service_date: NaiveDate,
        diagnoses: Vec<MedicalCode>,
        primary_dx: Option<MedicalCode>,
        procedures: Vec<MedicalCode>,
        medications: Vec<MedicalCode>,
        is_hospitalization: bool,
    ) -> Result<Self> {
        let claim = Claim {
            claim_id: claim_id.into(),
            service_date,
            diagnoses,
            primary_dx,
            procedures,
            medications,
            is_hospitalization,
        };
        claim.validate()?;
        Ok(claim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.code_count() == 0 {
            return Err(Error::Invalid(format!(
                "claim {} carries no codes",
                self.claim_id
            )));
        }
        if let Some(p) = &self.primary_dx {
            if !self.diagnoses.contains(p) {
                return Err(Error::Invalid(format!(
                    "claim {}: primary diagnosis {p} not among its diagnoses",
                    self.claim_id
                )));
            }
        }
        let lists = [
            (CodeSystem::Diagnosis, &self.diagnoses),
            (CodeSystem::Procedure, &self.procedures),
            (CodeSystem::Medication, &self.medications),
        ];
        for (system, list) in lists {
            if let Some(c) = list.iter().find(|c| c.system() != system) {
                return Err(Error::Invalid(format!(
                    "claim {}: {c} listed as {system}",
                    self.claim_id
                )));
            }
        }
        Ok(())
    }

    pub fn code_count(&self) -> usize {
        self.diagnoses.len() + self.procedures.len() + self.medications.len()
    }

    /// All codes in diagnosis, procedure, medication order.
    pub fn codes(&self) -> impl Iterator<Item = &MedicalCode> {
        self.diagnoses
            .iter()
            .chain(&self.procedures)
            .chain(&self.medications)
    }

    pub fn codes_of(&self, system: CodeSystem) -> &[MedicalCode] {
        match system {
            CodeSystem::Diagnosis => &self.diagnoses,
            CodeSystem::Procedure => &self.procedures,
            CodeSystem::Medication => &self.medications,
        }
    }

    /// Rebuilds the claim with every code passed through `f`; codes mapped to
    /// `None` are removed. Returns `None` when no code survives.
    pub fn map_codes(
        &self,
        mut f: impl FnMut(&MedicalCode) -> Option<MedicalCode>,
    ) -> Option<Claim> {
        let primary_pos = self
            .primary_dx
            .as_ref()
            .and_then(|p| self.diagnoses.iter().position(|d| d == p));
        let mut primary_dx = None;
        let mut diagnoses = Vec::with_capacity(self.diagnoses.len());
        for (i, code) in self.diagnoses.iter().enumerate() {
            if let Some(mapped) = f(code) {
                if Some(i) == primary_pos {
                    primary_dx = Some(mapped.clone());
                }
                diagnoses.push(mapped);
            }
        }
        let procedures = self.procedures.iter().filter_map(&mut f).collect();
        let medications = self.medications.iter().filter_map(&mut f).collect();
        let claim = Claim {
            claim_id: self.claim_id.clone(),
            service_date: self.service_date,
            diagnoses,
            primary_dx,
            procedures,
            medications,
            is_hospitalization: self.is_hospitalization,
        };
        (claim.code_count() > 0).then_some(claim)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatientHistory {
    pub patient_id: String,
    pub age_years: u32,
    pub sex: Sex,
    pub claims: Vec<Claim>,
    pub anchor_date: Option<NaiveDate>,
}

impl PatientHistory {
    /// Builds a history, sorting claims by service date (stable).
    pub fn new(
        patient_id: impl Into<String>,
        age_years: u32,
        sex: Sex,
        mut claims: Vec<Claim>,
        anchor_date: Option<NaiveDate>,
    ) -> Self {
        claims.sort_by_key(|c| c.service_date);
        PatientHistory {
            patient_id: patient_id.into(),
            age_years,
            sex,
            claims,
            anchor_date,
        }
    }

    pub fn codes(&self) -> impl Iterator<Item = &MedicalCode> {
        self.claims.iter().flat_map(Claim::codes)
    }

    pub fn distinct_codes(&self) -> BTreeSet<&MedicalCode> {
        self.codes().collect()
    }

    pub fn with_claims(&self, claims: Vec<Claim>) -> PatientHistory {
        PatientHistory {
            patient_id: self.patient_id.clone(),
            age_years: self.age_years,
            sex: self.sex,
            claims,
            anchor_date: self.anchor_date,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Hospitalized,
    NotHospitalized,
}

impl Label {
    pub fn is_positive(self) -> bool {
        self == Label::Hospitalized
    }

    pub fn as_f64(self) -> f64 {
        if self.is_positive() {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LabelOutcome {
    Labeled(Label),
    Indeterminate,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledExample {
    pub history: PatientHistory,
    pub label: Label,
}

fn lookback_start(anchor: NaiveDate) -> NaiveDate {
    anchor
        .checked_sub_months(Months::new(LOOKBACK_MONTHS))
        .unwrap_or(NaiveDate::MIN)
}

fn leakage_cutoff(anchor: NaiveDate) -> NaiveDate {
    anchor
        .checked_sub_days(Days::new(LEAKAGE_DAYS))
        .unwrap_or(NaiveDate::MIN)
}

/// Keeps claims dated strictly before `anchor - 7 days` and no earlier than
/// `anchor - 3 years`, preserving order.
pub fn apply_leakage_filter(claims: &[Claim], anchor: NaiveDate) -> Vec<Claim> {
    let start = lookback_start(anchor);
    let cutoff = leakage_cutoff(anchor);
    claims
        .iter()
        .filter(|c| c.service_date >= start && c.service_date < cutoff)
        .cloned()
        .collect()
}

/// Labels a patient from the unfiltered claim record.
pub fn derive_label(
    claims: &[Claim],
    anchor: NaiveDate,
    covid_codes: &BTreeSet<MedicalCode>,
) -> LabelOutcome {
    let post: Vec<&Claim> = claims.iter().filter(|c| c.service_date > anchor).collect();
    let covid_admission = post.iter().any(|c| {
        c.is_hospitalization
            && c.primary_dx
                .as_ref()
                .is_some_and(|p| covid_codes.contains(p))
    });
    if covid_admission {
        return LabelOutcome::Labeled(Label::Hospitalized);
    }
    let follow_up_end = anchor
        .checked_add_days(Days::new(FOLLOW_UP_DAYS))
        .unwrap_or(NaiveDate::MAX);
    let outpatient_after = post.iter().any(|c| !c.is_hospitalization);
    let silent_follow_up = !post.iter().any(|c| c.service_date <= follow_up_end);
    if outpatient_after || silent_follow_up {
        LabelOutcome::Labeled(Label::NotHospitalized)
    } else {
        LabelOutcome::Indeterminate
    }
}

/// Labels and leakage-filters one raw record. `None` for records without an
/// anchor date or with an indeterminate label.
pub fn preprocess(
    record: &PatientHistory,
    covid_codes: &BTreeSet<MedicalCode>,
) -> Option<LabeledExample> {
    let anchor = record.anchor_date?;
    match derive_label(&record.claims, anchor, covid_codes) {
        LabelOutcome::Labeled(label) => Some(LabeledExample {
            history: record.with_claims(apply_leakage_filter(&record.claims, anchor)),
            label,
        }),
        LabelOutcome::Indeterminate => None,
    }
}

#[derive(Clone, Debug, Default)]
pub struct Cohort {
    pub examples: Vec<LabeledExample>,
    pub n_indeterminate: usize,
    pub n_without_anchor: usize,
}

impl Cohort {
    pub fn positive_rate(&self) -> f64 {
        if self.examples.is_empty() {
            return 0.0;
        }
        self.examples.iter().filter(|e| e.label.is_positive()).count() as f64
            / self.examples.len() as f64
    }
}

pub fn build_cohort<'a>(
    records: impl IntoIterator<Item = &'a PatientHistory>,
    covid_codes: &BTreeSet<MedicalCode>,
) -> Cohort {
    let mut cohort = Cohort::default();
    for r in records {
        if r.anchor_date.is_none() {
            cohort.n_without_anchor += 1;
            continue;
        }
        match preprocess(r, covid_codes) {
            Some(ex) => cohort.examples.push(ex),
            None => cohort.n_indeterminate += 1,
        }
    }
    cohort
}
