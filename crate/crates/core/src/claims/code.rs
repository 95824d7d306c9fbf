use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodeSystem {
    /// ICD-10-CM diagnosis codes.
    Diagnosis,
    /// HCPCS Level II and CPT procedure codes.
    Procedure,
    /// National Drug Codes.
    Medication,
}

impl CodeSystem {
    pub const ALL: [CodeSystem; 3] = [
        CodeSystem::Diagnosis,
        CodeSystem::Procedure,
        CodeSystem::Medication,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CodeSystem::Diagnosis => "ICD-10-CM",
            CodeSystem::Procedure => "HCPCS/CPT",
            CodeSystem::Medication => "NDC",
        }
    }

    fn pattern(self) -> &'static str {
        match self {
            CodeSystem::Diagnosis => "[A-Z][0-9][0-9A-Z] followed by 0-4 alphanumerics",
            CodeSystem::Procedure => "[A-Z][0-9]{4} | [0-9]{5} | [0-9]{4}[A-Z]",
            CodeSystem::Medication => "8 to 11 digits after removing hyphens",
        }
    }

    /// Short tag used in risk-map files and token prefixes.
    pub fn tag(self) -> &'static str {
        match self {
            CodeSystem::Diagnosis => "DX",
            CodeSystem::Procedure => "PX",
            CodeSystem::Medication => "RX",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag.to_ascii_uppercase().as_str() {
            "DX" | "DIAGNOSIS" => Some(CodeSystem::Diagnosis),
            "PX" | "PROCEDURE" => Some(CodeSystem::Procedure),
            "RX" | "MEDICATION" => Some(CodeSystem::Medication),
            _ => None,
        }
    }

    fn accepts(self, v: &[u8]) -> bool {
        let upper = |b: &u8| b.is_ascii_uppercase();
        let digit = |b: &u8| b.is_ascii_digit();
        let alnum = |b: &u8| b.is_ascii_digit() || b.is_ascii_uppercase();
        match self {
            CodeSystem::Diagnosis => {
                (3..=7).contains(&v.len())
                    && upper(&v[0])
                    && digit(&v[1])
                    && alnum(&v[2])
                    && v[3..].iter().all(alnum)
            }
            CodeSystem::Procedure => {
                v.len() == 5
                    && ((upper(&v[0]) && v[1..].iter().all(digit))
                        || v.iter().all(digit)
                        || (v[..4].iter().all(digit) && upper(&v[4])))
            }
            // Package-level NDCs carry 10-11 digits; labeler-product forms
            // such as 0093-5851 carry 8-9.
            CodeSystem::Medication => (8..=11).contains(&v.len()) && v.iter().all(digit),
        }
    }
}

impl fmt::Display for CodeSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A validated billing code. The value is uppercase with punctuation removed.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MedicalCode {
    system: CodeSystem,
    value: String,
}

impl MedicalCode {
    pub fn system(&self) -> CodeSystem {
        self.system
    }

    pub fn value(&self) -> &str {
        &self.value
    }
}

impl fmt::Display for MedicalCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.value)
    }
}

/// Uppercases and strips every non-alphanumeric character.
pub fn normalize(raw: &str) -> String {
    raw.chars()
        .filter(char::is_ascii_alphanumeric)
        .map(|c| c.to_ascii_uppercase())
        .collect()
}

pub fn parse_code(system: CodeSystem, raw: &str) -> Result<MedicalCode> {
    let value = normalize(raw);
    if value.is_empty() || !system.accepts(value.as_bytes()) {
        return Err(Error::Format {
            system: system.name(),
            pattern: system.pattern(),
            input: raw.to_string(),
        });
    }
    Ok(MedicalCode { system, value })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn codes_from_the_worked_examples_parse() {
        let dx = ["R062", "R06", "J189", "J18", "E119", "J4590", "Z4881"];
        let px = ["A7003", "A7015", "1160F", "1159F", "99214", "99213", "G0299"];
        let rx = [
            "0143988701",
            "0143988775",
            "0093-5851",
            "33342-054",
            "57664-506",
            "51248-150",
        ];
        for c in dx {
            parse_code(CodeSystem::Diagnosis, c).unwrap();
        }
        for c in px {
            parse_code(CodeSystem::Procedure, c).unwrap();
        }
        for c in rx {
            parse_code(CodeSystem::Medication, c).unwrap();
        }
        assert_eq!(
            parse_code(CodeSystem::Medication, "33342-054").unwrap().value(),
            "33342054"
        );
    }

    #[test]
    fn diagnosis_is_normalized() {
        let c = parse_code(CodeSystem::Diagnosis, "r06.2").unwrap();
        assert_eq!(c.value(), "R062");
        assert_eq!(c.system(), CodeSystem::Diagnosis);
    }

    #[test]
    fn medication_hyphens_stripped() {
        let c = parse_code(CodeSystem::Medication, "0143-9887-01").unwrap();
        assert_eq!(c.value(), "0143988701");
    }

    #[test]
    fn empty_and_malformed_inputs_fail() {
        let err = parse_code(CodeSystem::Diagnosis, "").unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
        assert!(err.to_string().contains("[A-Z][0-9]"));
        for (sys, raw) in [
            (CodeSystem::Diagnosis, "1R06"),
            (CodeSystem::Diagnosis, "R0"),
            (CodeSystem::Diagnosis, "R06123456"),
            (CodeSystem::Procedure, "A700"),
            (CodeSystem::Procedure, "AB003"),
            (CodeSystem::Procedure, "1160FF"),
            (CodeSystem::Medication, "1234567"),
            (CodeSystem::Medication, "12345678901A"),
            (CodeSystem::Medication, "--"),
        ] {
            let err = parse_code(sys, raw).unwrap_err();
            assert!(err.to_string().contains(raw), "{err}");
        }
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in "[ -~]{0,16}") {
            let once = normalize(&s);
            prop_assert_eq!(normalize(&once), once.clone());
        }

        #[test]
        fn parse_accepts_its_own_output(s in "[A-Za-z][0-9][0-9A-Za-z.]{1,5}") {
            if let Ok(code) = parse_code(CodeSystem::Diagnosis, &s) {
                let again = parse_code(CodeSystem::Diagnosis, code.value()).unwrap();
                prop_assert_eq!(again, code);
            }
        }
    }
}
