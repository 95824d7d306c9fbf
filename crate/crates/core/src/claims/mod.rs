//! Claims domain types, code validation, cohort preprocessing and risk-factor
//! mapping.

mod age;
mod code;
pub mod corpus;
mod history;
mod risk;

pub use age::{AgeBucket, AgeBuckets, DEFAULT_LOWER_BOUNDS};
pub use code::{normalize, parse_code, CodeSystem, MedicalCode};
pub use corpus::{load_claims_corpus, open_claims_corpus, save_claims_corpus};
pub use history::{
    apply_leakage_filter, build_cohort, derive_label, preprocess, Claim, Cohort, Label,
    LabelOutcome, LabeledExample, PatientHistory, Sex, FOLLOW_UP_DAYS, LEAKAGE_DAYS,
    LOOKBACK_MONTHS,
};
pub use risk::{map_risk_factors, RiskEntry, RiskFactorMap, DEFAULT_RISK_COUNT, DEFAULT_RISK_MAP_TSV};
