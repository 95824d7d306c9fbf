//! Synthetic claims corpora with a planted, closed-form hospitalization risk.
//!
//! Each patient draws a set of active conditions from independent Bernoulli
//! prevalences. Claims emit codes from the active conditions' pools (plus
//! routine noise), so codes of one condition co-occur within claims. The
//! hospitalization label is drawn from
//! `sigmoid(intercept + Σ log_odds(active) + age_coef · bucket + sex_coef · male)`,
//! which [`Generator::oracle_probability`] recovers exactly from the codes.

mod config;
mod generator;

pub use config::{ConditionProfile, GeneratorConfig, NoisePool, DEFAULT_SEED, DEFAULT_TARGET_RATE};
pub use generator::{
    generate_labeled_cohort, generate_pretrain_corpus, oracle_probability, CohortRecord,
    Generator, PatientDraw,
};

#[cfg(test)]
mod tests;
