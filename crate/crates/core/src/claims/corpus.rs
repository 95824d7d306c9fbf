//! JSON-lines corpus files: one patient record per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::code::{parse_code, CodeSystem, MedicalCode};
use super::history::{Claim, PatientHistory, Sex};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClaimRecord {
    claim_id: String,
    service_date: NaiveDate,
    is_hospitalization: bool,
    primary_dx: Option<String>,
    dx: Vec<String>,
    px: Vec<String>,
    rx: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PatientRecord {
    patient_id: String,
    age: u32,
    sex: Sex,
    anchor_date: Option<NaiveDate>,
    claims: Vec<ClaimRecord>,
}

fn codes(list: &[MedicalCode]) -> Vec<String> {
    list.iter().map(|c| c.value().to_string()).collect()
}

impl From<&PatientHistory> for PatientRecord {
    fn from(h: &PatientHistory) -> Self {
        PatientRecord {
            patient_id: h.patient_id.clone(),
            age: h.age_years,
            sex: h.sex,
            anchor_date: h.anchor_date,
            claims: h
                .claims
                .iter()
                .map(|c| ClaimRecord {
                    claim_id: c.claim_id.clone(),
                    service_date: c.service_date,
                    is_hospitalization: c.is_hospitalization,
                    primary_dx: c.primary_dx.as_ref().map(|p| p.value().to_string()),
                    dx: codes(&c.diagnoses),
                    px: codes(&c.procedures),
                    rx: codes(&c.medications),
                })
                .collect(),
        }
    }
}

impl PatientRecord {
    fn into_history(self) -> Result<PatientHistory> {
        let parse_all = |sys, list: Vec<String>| -> Result<Vec<MedicalCode>> {
            list.iter().map(|c| parse_code(sys, c)).collect()
        };
        let mut claims = Vec::with_capacity(self.claims.len());
        for c in self.claims {
            let primary = c
                .primary_dx
                .map(|p| parse_code(CodeSystem::Diagnosis, &p))
                .transpose()?;
            claims.push(Claim::new(
                c.claim_id,
                c.service_date,
                parse_all(CodeSystem::Diagnosis, c.dx)?,
                primary,
                parse_all(CodeSystem::Procedure, c.px)?,
                parse_all(CodeSystem::Medication, c.rx)?,
                c.is_hospitalization,
            )?);
        }
        Ok(PatientHistory::new(
            self.patient_id,
            self.age,
            self.sex,
            claims,
            self.anchor_date,
        ))
    }
}

/// Serializes one record as a single JSON line (without the newline).
pub fn to_json_line(history: &PatientHistory) -> String {
    serde_json::to_string(&PatientRecord::from(history)).expect("record serializes")
}

pub fn from_json_line(line: &str) -> Result<PatientHistory> {
    let record: PatientRecord = serde_json::from_str(line)?;
    record.into_history()
}

/// Streaming reader; blank lines are skipped.
pub struct CorpusReader<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
    path: PathBuf,
}

impl<R: BufRead> CorpusReader<R> {
    pub fn new(reader: R, path: impl Into<PathBuf>) -> Self {
        CorpusReader {
            lines: reader.lines(),
            line_no: 0,
            path: path.into(),
        }
    }
}

impl<R: BufRead> Iterator for CorpusReader<R> {
    type Item = Result<PatientHistory>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = self.lines.next()?;
            self.line_no += 1;
            let line = match line {
                Ok(l) => l,
                Err(e) => return Some(Err(Error::io(&self.path, e))),
            };
            if line.trim().is_empty() {
                continue;
            }
            return Some(from_json_line(&line).map_err(|e| Error::Schema {
                path: self.path.clone(),
                line: self.line_no,
                message: e.to_string(),
            }));
        }
    }
}

pub fn open_claims_corpus(path: impl AsRef<Path>) -> Result<CorpusReader<BufReader<File>>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(CorpusReader::new(BufReader::new(file), path))
}

pub fn load_claims_corpus(path: impl AsRef<Path>) -> Result<Vec<PatientHistory>> {
    open_claims_corpus(path)?.collect()
}

pub fn write_claims_corpus<'a, W: Write>(
    mut out: W,
    records: impl IntoIterator<Item = &'a PatientHistory>,
) -> std::io::Result<()> {
    for r in records {
        out.write_all(to_json_line(r).as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn save_claims_corpus<'a>(
    records: impl IntoIterator<Item = &'a PatientHistory>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_claims_corpus(BufWriter::new(file), records).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Vec<PatientHistory> {
        let dx = |c| parse_code(CodeSystem::Diagnosis, c).unwrap();
        let claim = Claim::new(
            "p1-0",
            "2019-03-04".parse().unwrap(),
            vec![dx("E119"), dx("J4590")],
            Some(dx("E119")),
            vec![parse_code(CodeSystem::Procedure, "G0299").unwrap()],
            vec![parse_code(CodeSystem::Medication, "0143-9887-01").unwrap()],
            false,
        )
        .unwrap();
        vec![
            PatientHistory::new("p1", 65, Sex::F, vec![claim], Some("2020-05-01".parse().unwrap())),
            PatientHistory::new("p2", 3, Sex::M, vec![], None),
        ]
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        save_claims_corpus(&sample(), &path).unwrap();
        assert_eq!(load_claims_corpus(&path).unwrap(), sample());
    }

    #[test]
    fn wire_format_field_names() {
        let line = to_json_line(&sample()[0]);
        for key in [
            "\"patient_id\"", "\"age\"", "\"sex\":\"F\"", "\"anchor_date\":\"2020-05-01\"",
            "\"claim_id\"", "\"service_date\"", "\"is_hospitalization\"", "\"primary_dx\":\"E119\"",
            "\"dx\"", "\"px\"", "\"rx\":[\"0143988701\"]",
        ] {
            assert!(line.contains(key), "{key} missing from {line}");
        }
        assert!(to_json_line(&sample()[1]).contains("\"anchor_date\":null"));
    }

    #[test]
    fn empty_file_is_empty_stream() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(load_claims_corpus(&path).unwrap().is_empty());
    }

    #[test]
    fn malformed_line_is_named() {
        let mut text = String::new();
        for r in sample().iter().cycle().take(6) {
            text.push_str(&to_json_line(r));
            text.push('\n');
        }
        text.push_str("{\"patient_id\": \"x\", \"age\": -1}\n");
        let reader = CorpusReader::new(text.as_bytes(), "mem.jsonl");
        let results: Vec<_> = reader.collect();
        assert_eq!(results.len(), 7);
        let err = results[6].as_ref().unwrap_err();
        assert!(matches!(err, Error::Schema { line: 7, .. }), "{err}");
        assert!(err.to_string().contains("line 7"));
    }

    #[test]
    fn invalid_code_reports_line() {
        let bad = to_json_line(&sample()[0]).replace("E119\",\"J4590", "E1\",\"J4590");
        let err = CorpusReader::new(format!("\n{bad}\n").as_bytes(), "m")
            .next()
            .unwrap()
            .unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn missing_file_names_path() {
        let err = load_claims_corpus("/nonexistent/corpus.jsonl").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/corpus.jsonl"));
    }

    proptest! {
        #[test]
        fn json_line_round_trip(age in 0u32..110, male in any::<bool>(), n in 0usize..4, hosp in any::<bool>()) {
            let dx = parse_code(CodeSystem::Diagnosis, "J189").unwrap();
            let claims = (0..n).map(|i| Claim::new(
                format!("c{i}"),
                NaiveDate::from_ymd_opt(2019, 1, 1 + i as u32).unwrap(),
                vec![dx.clone()], hosp.then(|| dx.clone()), vec![], vec![], hosp,
            ).unwrap()).collect();
            let h = PatientHistory::new("p", age, if male { Sex::M } else { Sex::F }, claims, None);
            prop_assert_eq!(from_json_line(&to_json_line(&h)).unwrap(), h);
        }
    }
}
