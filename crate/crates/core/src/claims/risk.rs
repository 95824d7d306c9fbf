use std::path::Path;

use super::age::AgeBuckets;
use super::code::{normalize, CodeSystem, MedicalCode};
use super::history::PatientHistory;
use crate::error::{Error, Result};

pub const DEFAULT_RISK_MAP_TSV: &str = include_str!("../../data/risk_factors.tsv");
pub const DEFAULT_RISK_COUNT: usize = 25;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RiskEntry {
    pub risk: usize,
    pub system: CodeSystem,
    pub prefix_lo: String,
    pub prefix_hi: String,
}

impl RiskEntry {
    pub fn matches(&self, code: &MedicalCode) -> bool {
        let v = code.value();
        let n = self.prefix_lo.len();
        code.system() == self.system
            && v.len() >= n
            && (self.prefix_lo.as_str()..=self.prefix_hi.as_str()).contains(&&v[..n])
    }

    fn overlaps(&self, other: &RiskEntry) -> bool {
        if self.system != other.system {
            return false;
        }
        let n = self.prefix_lo.len().min(other.prefix_lo.len());
        let (a_lo, a_hi) = (&self.prefix_lo[..n], &self.prefix_hi[..n]);
        let (b_lo, b_hi) = (&other.prefix_lo[..n], &other.prefix_hi[..n]);
        a_lo <= b_hi && b_lo <= a_hi
    }
}

/// Maps codes onto named risk-factor variables via inclusive prefix ranges.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RiskFactorMap {
    names: Vec<String>,
    entries: Vec<RiskEntry>,
}

impl Default for RiskFactorMap {
    fn default() -> Self {
        let map = Self::parse(DEFAULT_RISK_MAP_TSV).expect("bundled risk map parses");
        debug_assert_eq!(map.len(), DEFAULT_RISK_COUNT);
        map
    }
}

impl RiskFactorMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut names: Vec<String> = Vec::new();
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: String| Error::Schema {
                path: "<risk map>".into(),
                line: i + 1,
                message: msg,
            };
            let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
            let [name, system, lo, hi] = cols[..] else {
                return Err(bad(format!("expected 4 tab-separated columns, found {}", cols.len())));
            };
            let system = CodeSystem::from_tag(system)
                .ok_or_else(|| bad(format!("unknown code system {system:?}")))?;
            let (lo, hi) = (normalize(lo), normalize(hi));
            if lo.is_empty() || lo.len() != hi.len() || lo > hi {
                return Err(bad(format!("invalid prefix range {lo}-{hi}")));
            }
            let risk = match names.iter().position(|n| n == name) {
                Some(r) => r,
                None => {
                    names.push(name.to_string());
                    names.len() - 1
                }
            };
            let entry = RiskEntry {
                risk,
                system,
                prefix_lo: lo,
                prefix_hi: hi,
            };
            if let Some(prev) = entries
                .iter()
                .find(|e: &&RiskEntry| e.risk == risk && e.overlaps(&entry))
            {
                return Err(bad(format!(
                    "range {}-{} overlaps {}-{} of {name}",
                    entry.prefix_lo, entry.prefix_hi, prev.prefix_lo, prev.prefix_hi
                )));
            }
            entries.push(entry);
        }
        Ok(RiskFactorMap { names, entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Schema { line, message, .. } => Error::Schema {
                path: path.to_path_buf(),
                line,
                message,
            },
            other => other,
        })
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("# risk_name\tsystem\tprefix_lo\tprefix_hi\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                self.names[e.risk],
                e.system.tag(),
                e.prefix_lo,
                e.prefix_hi
            ));
        }
        out
    }

    /// Number of distinct risk variables.
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn entries(&self) -> &[RiskEntry] {
        &self.entries
    }

    pub fn entries_for(&self, risk: usize) -> impl Iterator<Item = &RiskEntry> {
        self.entries.iter().filter(move |e| e.risk == risk)
    }

    /// Indices of every risk whose ranges contain `code`, ascending.
    pub fn lookup(&self, code: &MedicalCode) -> Vec<usize> {
        let mut hits: Vec<usize> = self
            .entries
            .iter()
            .filter(|e| e.matches(code))
            .map(|e| e.risk)
            .collect();
        hits.sort_unstable();
        hits.dedup();
        hits
    }

    pub fn is_risk_code(&self, code: &MedicalCode) -> bool {
        self.entries.iter().any(|e| e.matches(code))
    }
}

/// Risk indicators followed by the age-bucket ordinal and the sex indicator.
pub fn map_risk_factors(
    history: &PatientHistory,
    map: &RiskFactorMap,
    ages: &AgeBuckets,
) -> Vec<f64> {
    let mut features = vec![0.0; map.len() + 2];
    for code in history.codes() {
        for r in map.lookup(code) {
            features[r] = 1.0;
        }
    }
    features[map.len()] = ages.discretize(history.age_years).ordinal as f64;
    features[map.len() + 1] = history.sex.indicator();
    features
}
