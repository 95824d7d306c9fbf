use std::collections::HashMap;

use chrono::{Days, Months, NaiveDate};

use super::config::GeneratorConfig;
use crate::claims::{
    build_cohort, parse_code, Claim, CodeSystem, Cohort, MedicalCode, PatientHistory, Sex,
};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::math::sigmoid;
use crate::rng::Rng;

const STREAM_COHORT: u64 = 1;
const STREAM_PRETRAIN: u64 = 2;
const STREAM_CALIBRATION: u64 = 3;
const PRETRAIN_BLOCK: usize = 2048;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Owner {
    Profile(usize),
    Noise,
    Symptom,
}

/// A code pool with cumulative Zipf weights.
#[derive(Clone, Debug)]
struct Pool {
    codes: Vec<MedicalCode>,
    cumulative: Vec<f64>,
}

impl Pool {
    fn new(system: CodeSystem, raw: &[String], zipf: f64) -> Result<Self> {
        let codes = raw
            .iter()
            .map(|c| parse_code(system, c))
            .collect::<Result<Vec<_>>>()?;
        let mut acc = 0.0;
        let cumulative = (0..codes.len())
            .map(|r| {
                acc += 1.0 / ((r + 1) as f64).powf(zipf);
                acc
            })
            .collect();
        Ok(Pool { codes, cumulative })
    }

    fn draw(&self, rng: &mut Rng) -> MedicalCode {
        self.codes[rng.weighted_index(&self.cumulative)].clone()
    }
}

#[derive(Clone, Debug)]
struct CompiledProfile {
    dx: Pool,
    px: Pool,
    rx: Pool,
}

/// The latent state behind one synthetic patient.
#[derive(Clone, Debug, PartialEq)]
pub struct PatientDraw {
    pub age_years: u32,
    pub sex: Sex,
    pub active: Vec<usize>,
}

/// A raw cohort record together with the generator's ground truth.
#[derive(Clone, Debug)]
pub struct CohortRecord {
    pub record: PatientHistory,
    pub draw: PatientDraw,
    pub probability: f64,
}

/// Validated generator ready to emit corpora.
#[derive(Clone, Debug)]
pub struct Generator {
    config: GeneratorConfig,
    profiles: Vec<CompiledProfile>,
    noise: CompiledProfile,
    symptoms: Vec<MedicalCode>,
    covid: Vec<MedicalCode>,
    other_admission: MedicalCode,
    owners: HashMap<MedicalCode, Owner>,
}

fn day_offset(base: NaiveDate, days: u64) -> NaiveDate {
    base.checked_add_days(Days::new(days)).expect("date in range")
}

fn uniform_date(rng: &mut Rng, lo: NaiveDate, hi: NaiveDate) -> NaiveDate {
    let span = (hi - lo).num_days().max(0) as u64;
    day_offset(lo, rng.below(span + 1))
}

impl Generator {
    pub fn new(config: &GeneratorConfig) -> Result<Self> {
        let bad = |m: String| Err(Error::Config(m));
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(config.noise_code_rate) || !unit(config.indeterminate_rate) {
            return bad("rates must lie in [0, 1]".into());
        }
        if config.routine_weight < 0.0 || config.extra_claims_mean < 0.0 || config.code_zipf < 0.0 {
            return bad("weights and means must be non-negative".into());
        }
        let mut owners = HashMap::new();
        let mut register = |code: &MedicalCode, owner: Owner| -> Result<()> {
            if let Some(prev) = owners.insert(code.clone(), owner) {
                return Err(Error::Config(format!(
                    "code {code} is claimed by both {prev:?} and {owner:?}"
                )));
            }
            Ok(())
        };
        let mut profiles = Vec::with_capacity(config.profiles.len());
        for (i, p) in config.profiles.iter().enumerate() {
            if p.dx_pool.is_empty() || p.px_pool.is_empty() || p.rx_pool.is_empty() {
                return bad(format!("profile {} has an empty pool", p.name));
            }
            if !(p.base_prevalence > 0.0 && p.base_prevalence < 1.0) {
                return bad(format!("profile {} prevalence outside (0, 1)", p.name));
            }
            let compiled = CompiledProfile {
                dx: Pool::new(CodeSystem::Diagnosis, &p.dx_pool, config.code_zipf)?,
                px: Pool::new(CodeSystem::Procedure, &p.px_pool, config.code_zipf)?,
                rx: Pool::new(CodeSystem::Medication, &p.rx_pool, config.code_zipf)?,
            };
            for pool in [&compiled.dx, &compiled.px, &compiled.rx] {
                for c in &pool.codes {
                    register(c, Owner::Profile(i))?;
                }
            }
            profiles.push(compiled);
        }
        let noise = CompiledProfile {
            dx: Pool::new(CodeSystem::Diagnosis, &config.noise.dx, config.code_zipf)?,
            px: Pool::new(CodeSystem::Procedure, &config.noise.px, config.code_zipf)?,
            rx: Pool::new(CodeSystem::Medication, &config.noise.rx, config.code_zipf)?,
        };
        if config.noise_code_rate > 0.0 && noise.dx.codes.is_empty() {
            return bad("noise diagnosis pool is empty".into());
        }
        for pool in [&noise.dx, &noise.px, &noise.rx] {
            for c in &pool.codes {
                register(c, Owner::Noise)?;
            }
        }
        let symptoms = config
            .symptom_codes
            .iter()
            .map(|c| parse_code(CodeSystem::Diagnosis, c))
            .collect::<Result<Vec<_>>>()?;
        for c in &symptoms {
            register(c, Owner::Symptom)?;
        }
        let covid: Vec<MedicalCode> = config.covid_code_set()?.into_iter().collect();
        if covid.is_empty() {
            return bad("at least one COVID-19 diagnosis code is required".into());
        }
        let other_admission = parse_code(CodeSystem::Diagnosis, &config.other_admission_code)?;
        Ok(Generator {
            config: config.clone(),
            profiles,
            noise,
            symptoms,
            covid,
            other_admission,
            owners,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    fn draw_patient(&self, rng: &mut Rng) -> PatientDraw {
        let age_years = if rng.bernoulli(0.12) {
            rng.range_inclusive(0, 18)
        } else {
            rng.range_inclusive(19, 95)
        } as u32;
        let sex = if rng.bernoulli(0.5) { Sex::M } else { Sex::F };
        let active = self
            .config
            .profiles
            .iter()
            .enumerate()
            .filter_map(|(i, p)| rng.bernoulli(p.base_prevalence).then_some(i))
            .collect();
        PatientDraw {
            age_years,
            sex,
            active,
        }
    }

    /// Linear predictor without the intercept.
    fn partial_score(&self, draw: &PatientDraw) -> f64 {
        let conditions: f64 = draw
            .active
            .iter()
            .map(|&i| self.config.profiles[i].log_odds_hospitalization)
            .sum();
        let bucket = self.config.age_buckets.discretize(draw.age_years).ordinal as f64;
        conditions + self.config.age_coef * bucket + self.config.sex_coef * draw.sex.indicator()
    }

    pub fn score(&self, draw: &PatientDraw) -> f64 {
        self.config.intercept + self.partial_score(draw)
    }

    fn condition_claim(&self, rng: &mut Rng, profile: &CompiledProfile) -> (Vec<MedicalCode>, Vec<MedicalCode>, Vec<MedicalCode>) {
        let mut dx = vec![profile.dx.draw(rng)];
        if rng.bernoulli(0.4) {
            let extra = profile.dx.draw(rng);
            if !dx.contains(&extra) {
                dx.push(extra);
            }
        }
        let px = if rng.bernoulli(0.6) { vec![profile.px.draw(rng)] } else { vec![] };
        let rx = if rng.bernoulli(0.6) { vec![profile.rx.draw(rng)] } else { vec![] };
        if rng.bernoulli(self.config.noise_code_rate) {
            let extra = self.noise.dx.draw(rng);
            if !dx.contains(&extra) {
                dx.push(extra);
            }
        }
        (dx, px, rx)
    }

    fn routine_claim(&self, rng: &mut Rng) -> (Vec<MedicalCode>, Vec<MedicalCode>, Vec<MedicalCode>) {
        let dx = vec![self.noise.dx.draw(rng)];
        let px = if rng.bernoulli(0.7) && !self.noise.px.codes.is_empty() {
            vec![self.noise.px.draw(rng)]
        } else {
            vec![]
        };
        let rx = if rng.bernoulli(0.3) && !self.noise.rx.codes.is_empty() {
            vec![self.noise.rx.draw(rng)]
        } else {
            vec![]
        };
        (dx, px, rx)
    }

    /// Background claims: one per active condition, then Poisson extras
    /// driven by a random active condition or by routine care.
    fn background_claims(
        &self,
        rng: &mut Rng,
        draw: &PatientDraw,
        lo: NaiveDate,
        hi: NaiveDate,
    ) -> Vec<(NaiveDate, Vec<MedicalCode>, Vec<MedicalCode>, Vec<MedicalCode>)> {
        let mut out = Vec::new();
        for &c in &draw.active {
            let (dx, px, rx) = self.condition_claim(rng, &self.profiles[c]);
            out.push((uniform_date(rng, lo, hi), dx, px, rx));
        }
        let routine_weight = if self.config.noise_code_rate > 0.0 {
            self.config.routine_weight
        } else {
            0.0
        };
        let total_weight = draw.active.len() as f64 + routine_weight;
        if total_weight <= 0.0 {
            return out;
        }
        let extras = rng.poisson(self.config.extra_claims_mean);
        for _ in 0..extras {
            let pick = rng.uniform() * total_weight;
            let (dx, px, rx) = if pick < draw.active.len() as f64 {
                let c = draw.active[(pick as usize).min(draw.active.len() - 1)];
                self.condition_claim(rng, &self.profiles[c])
            } else {
                self.routine_claim(rng)
            };
            out.push((uniform_date(rng, lo, hi), dx, px, rx));
        }
        out
    }

    fn assemble(
        patient_id: String,
        draw: &PatientDraw,
        mut raw: Vec<(NaiveDate, Vec<MedicalCode>, Vec<MedicalCode>, Vec<MedicalCode>, bool)>,
        anchor: Option<NaiveDate>,
    ) -> PatientHistory {
        raw.sort_by_key(|r| r.0);
        let claims = raw
            .into_iter()
            .enumerate()
            .map(|(k, (date, dx, px, rx, hosp))| {
                let primary = dx.first().cloned();
                Claim::new(format!("{patient_id}-{k}"), date, dx, primary, px, rx, hosp)
                    .expect("generated claims are valid")
            })
            .collect();
        PatientHistory::new(patient_id, draw.age_years, draw.sex, claims, anchor)
    }

    /// Generates raw cohort record `index`, including post-anchor claims.
    pub fn cohort_record(&self, index: usize) -> CohortRecord {
        let mut rng = Rng::derived(self.config.seed, STREAM_COHORT, index as u64);
        let draw = self.draw_patient(&mut rng);
        let anchor = uniform_date(
            &mut rng,
            NaiveDate::from_ymd_opt(2020, 4, 1).expect("valid"),
            NaiveDate::from_ymd_opt(2020, 12, 31).expect("valid"),
        );
        let lo = anchor.checked_sub_months(Months::new(36)).expect("valid");
        let hi = anchor.checked_sub_days(Days::new(8)).expect("valid");
        let mut raw: Vec<_> = self
            .background_claims(&mut rng, &draw, lo, hi)
            .into_iter()
            .map(|(d, dx, px, rx)| (d, dx, px, rx, false))
            .collect();
        let probability = sigmoid(self.score(&draw));
        let positive = rng.bernoulli(probability);
        let leak_p = if positive { 0.5 } else { 0.15 };
        if !self.symptoms.is_empty() && rng.bernoulli(leak_p) {
            let date = anchor - Days::new(rng.below(8));
            let mut dx = vec![rng.choose(&self.symptoms).expect("nonempty").clone()];
            let second = rng.choose(&self.symptoms).expect("nonempty").clone();
            if !dx.contains(&second) {
                dx.push(second);
            }
            raw.push((date, dx, vec![], vec![], false));
        }
        let covid = || self.covid[0].clone();
        if rng.bernoulli(self.config.indeterminate_rate) {
            let date = day_offset(anchor, 1 + rng.below(20));
            raw.push((date, vec![self.other_admission.clone()], vec![], vec![], true));
        } else if positive {
            let date = day_offset(anchor, 1 + rng.below(14));
            raw.push((date, vec![covid()], vec![], vec![], true));
        } else if rng.bernoulli(0.7) {
            let date = day_offset(anchor, 2 + rng.below(44));
            raw.push((date, vec![covid()], vec![], vec![], false));
        }
        let record = Self::assemble(format!("c{index:06}"), &draw, raw, Some(anchor));
        CohortRecord {
            record,
            draw,
            probability,
        }
    }

    /// Raw records (with post-anchor claims) for the labeled cohort.
    pub fn generate_raw_cohort(&self, exec: Execution) -> Vec<CohortRecord> {
        exec::map_range(exec, self.config.n_patients, |i| self.cohort_record(i))
    }

    /// Labeled, leakage-filtered cohort. Indeterminate records are excluded
    /// and counted.
    pub fn generate_labeled_cohort(&self, exec: Execution) -> Result<Cohort> {
        let raw = self.generate_raw_cohort(exec);
        Ok(build_cohort(
            raw.iter().map(|r| &r.record),
            &self.config.covid_code_set()?,
        ))
    }

    fn pretrain_patient(&self, index: usize) -> PatientHistory {
        let mut rng = Rng::derived(self.config.seed, STREAM_PRETRAIN, index as u64);
        let draw = self.draw_patient(&mut rng);
        let lo = NaiveDate::from_ymd_opt(2019, 1, 1).expect("valid");
        let hi = NaiveDate::from_ymd_opt(2020, 2, 29).expect("valid");
        let raw = self
            .background_claims(&mut rng, &draw, lo, hi)
            .into_iter()
            .map(|(d, dx, px, rx)| (d, dx, px, rx, false))
            .collect();
        Self::assemble(format!("p{index:07}"), &draw, raw, None)
    }

    /// Unlabeled pretraining histories holding exactly `n_pretrain_claims`
    /// claims in total (the last patient is cut short when needed).
    pub fn generate_pretrain_corpus(&self, exec: Execution) -> Vec<PatientHistory> {
        let target = self.config.n_pretrain_claims;
        let mut out = Vec::new();
        let mut total = 0;
        let mut next = 0usize;
        let mut stalled_blocks = 0;
        while total < target {
            let block = exec::map_range(exec, PRETRAIN_BLOCK, |k| self.pretrain_patient(next + k));
            next += PRETRAIN_BLOCK;
            let before = total;
            for mut h in block {
                if h.claims.is_empty() {
                    continue;
                }
                if total + h.claims.len() > target {
                    h.claims.truncate(target - total);
                }
                total += h.claims.len();
                out.push(h);
                if total == target {
                    break;
                }
            }
            if total == before {
                stalled_blocks += 1;
                if stalled_blocks > 4 {
                    break;
                }
            }
        }
        out
    }

    /// Intercept whose expected positive rate matches `target`, estimated on
    /// `n` fresh patient draws and solved by bisection.
    pub fn calibrate_intercept(&self, target: f64, n: usize) -> f64 {
        let scores: Vec<f64> = (0..n)
            .map(|i| {
                let mut rng = Rng::derived(self.config.seed, STREAM_CALIBRATION, i as u64);
                self.partial_score(&self.draw_patient(&mut rng))
            })
            .collect();
        let rate = |b: f64| scores.iter().map(|s| sigmoid(b + s)).sum::<f64>() / n as f64;
        let (mut lo, mut hi) = (-30.0, 30.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if rate(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Conditions evidenced by the history's codes.
    pub fn active_conditions(&self, history: &PatientHistory) -> Result<Vec<usize>> {
        let mut active = Vec::new();
        for code in history.codes() {
            match self.owners.get(code) {
                Some(Owner::Profile(i)) => active.push(*i),
                Some(Owner::Noise | Owner::Symptom) => {}
                None if self.covid.contains(code) || *code == self.other_admission => {}
                None => {
                    return Err(Error::NotAttributable {
                        patient_id: history.patient_id.clone(),
                        reason: format!("code {code} is not emitted by any profile"),
                    })
                }
            }
        }
        active.sort_unstable();
        active.dedup();
        Ok(active)
    }

    /// Exact hospitalization probability for a (leakage-filtered) history.
    pub fn oracle_probability(&self, history: &PatientHistory) -> Result<f64> {
        let draw = PatientDraw {
            age_years: history.age_years,
            sex: history.sex,
            active: self.active_conditions(history)?,
        };
        Ok(sigmoid(self.score(&draw)))
    }

    pub fn profile_of(&self, code: &MedicalCode) -> Option<usize> {
        match self.owners.get(code) {
            Some(Owner::Profile(i)) => Some(*i),
            _ => None,
        }
    }

    pub fn is_noise(&self, code: &MedicalCode) -> bool {
        matches!(self.owners.get(code), Some(Owner::Noise))
    }
}

/// Convenience wrappers over [`Generator`].
pub fn generate_pretrain_corpus(config: &GeneratorConfig, exec: Execution) -> Result<Vec<PatientHistory>> {
    Ok(Generator::new(config)?.generate_pretrain_corpus(exec))
}

pub fn generate_labeled_cohort(config: &GeneratorConfig, exec: Execution) -> Result<Cohort> {
    Generator::new(config)?.generate_labeled_cohort(exec)
}

pub fn oracle_probability(history: &PatientHistory, config: &GeneratorConfig) -> Result<f64> {
    Generator::new(config)?.oracle_probability(history)
}
