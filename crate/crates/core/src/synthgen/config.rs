use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::claims::{parse_code, AgeBuckets, CodeSystem, MedicalCode, RiskFactorMap};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// A latent condition: the codes it emits and its effect on hospitalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionProfile {
    pub name: String,
    pub dx_pool: Vec<String>,
    pub px_pool: Vec<String>,
    pub rx_pool: Vec<String>,
    pub base_prevalence: f64,
    pub log_odds_hospitalization: f64,
}

/// Codes that carry no condition signal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisePool {
    pub dx: Vec<String>,
    pub px: Vec<String>,
    pub rx: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub n_patients: usize,
    pub n_pretrain_claims: usize,
    pub profiles: Vec<ConditionProfile>,
    pub noise: NoisePool,
    /// Diagnosis codes that only appear in the week before the anchor date.
    pub symptom_codes: Vec<String>,
    pub covid_codes: Vec<String>,
    /// Non-COVID admission diagnosis used for indeterminate records.
    pub other_admission_code: String,
    pub intercept: f64,
    /// Log-odds per age-bucket ordinal.
    pub age_coef: f64,
    /// Log-odds for male sex.
    pub sex_coef: f64,
    /// Probability that a condition claim picks up an extra noise code.
    pub noise_code_rate: f64,
    /// Weight of routine (noise-only) claims against each active condition
    /// when choosing what drives a claim. Ignored when `noise_code_rate` is 0.
    pub routine_weight: f64,
    /// Mean number of claims beyond one per active condition.
    pub extra_claims_mean: f64,
    /// Zipf exponent for code frequencies inside a pool.
    pub code_zipf: f64,
    pub indeterminate_rate: f64,
    pub age_buckets: AgeBuckets,
}

pub const DEFAULT_TARGET_RATE: f64 = 0.15;
pub const DEFAULT_SEED: u64 = 20_210_104;

impl Default for GeneratorConfig {
    fn default() -> Self {
        let mut cfg = Self::uncalibrated(DEFAULT_SEED, &RiskFactorMap::default());
        cfg.intercept = super::Generator::new(&cfg)
            .expect("default generator config is valid")
            .calibrate_intercept(DEFAULT_TARGET_RATE, 200_000);
        cfg
    }
}

impl GeneratorConfig {
    /// Default layout: one profile per risk variable (codes drawn from the
    /// risk ranges, positive log-odds) plus 15 non-risk profiles. The
    /// intercept is left at zero.
    pub fn uncalibrated(seed: u64, map: &RiskFactorMap) -> Self {
        let mut builder = PoolBuilder::new(map, seed);
        let mut profiles = Vec::new();
        let n_risk = map.len();
        for r in 0..n_risk {
            let frac = r as f64 / (n_risk.max(2) - 1) as f64;
            let entries: Vec<_> = map.entries_for(r).cloned().collect();
            let dx_ranges: Vec<_> = entries
                .iter()
                .filter(|e| e.system == CodeSystem::Diagnosis)
                .map(|e| (e.prefix_lo.clone(), e.prefix_hi.clone()))
                .collect();
            let px_ranges: Vec<_> = entries
                .iter()
                .filter(|e| e.system == CodeSystem::Procedure)
                .map(|e| (e.prefix_lo.clone(), e.prefix_hi.clone()))
                .collect();
            let dx_pool = builder.dx_in_ranges(&dx_ranges, 14);
            let px_pool = if px_ranges.is_empty() {
                builder.free_px(8)
            } else {
                builder.px_in_ranges(&px_ranges, 8)
            };
            profiles.push(ConditionProfile {
                name: map.names()[r].clone(),
                dx_pool,
                px_pool,
                rx_pool: builder.free_rx(8),
                base_prevalence: 0.03 + 0.06 * ((r * 7) % n_risk) as f64 / n_risk as f64,
                log_odds_hospitalization: 1.2 + 1.4 * frac,
            });
        }
        const BENIGN: [(&str, &str, &str); 15] = [
            ("musculoskeletal", "M00", "M99"),
            ("eye", "H00", "H59"),
            ("ear", "H60", "H95"),
            ("skin", "L00", "L99"),
            ("epilepsy_sleep", "G40", "G47"),
            ("upper_gi", "K20", "K31"),
            ("urinary", "N30", "N39"),
            ("abdominal_symptoms", "R10", "R19"),
            ("injury", "S00", "S99"),
            ("thyroid", "E00", "E07"),
            ("anxiety", "F40", "F48"),
            ("allergy", "J30", "J39"),
            ("migraine", "G43", "G44"),
            ("gynecologic", "N80", "N98"),
            ("dental", "K00", "K14"),
        ];
        for (i, (name, lo, hi)) in BENIGN.iter().enumerate() {
            let frac = i as f64 / (BENIGN.len() - 1) as f64;
            profiles.push(ConditionProfile {
                name: name.to_string(),
                dx_pool: builder.dx_in_ranges(&[(lo.to_string(), hi.to_string())], 14),
                px_pool: builder.free_px(8),
                rx_pool: builder.free_rx(8),
                base_prevalence: 0.05 + 0.08 * ((i * 4) % BENIGN.len()) as f64 / BENIGN.len() as f64,
                log_odds_hospitalization: -0.3 + 0.8 * frac,
            });
        }
        let noise = NoisePool {
            dx: builder.dx_in_ranges(&[("Z00".into(), "Z13".into())], 30),
            px: builder.px_in_ranges(&[("99201".into(), "99215".into()), ("36400".into(), "36499".into())], 20),
            rx: builder.free_rx(20),
        };
        // Wheezing and its parent category ride along with the allergy
        // profile so the worked-example tokens exist in every default corpus.
        if let Some(p) = profiles.iter_mut().find(|p| p.name == "allergy") {
            for code in ["R062", "R06"] {
                if let Some(c) = builder.claim(CodeSystem::Diagnosis, code.into()) {
                    p.dx_pool.push(c);
                }
            }
        }
        GeneratorConfig {
            seed,
            n_patients: 50_000,
            n_pretrain_claims: 200_000,
            profiles,
            noise,
            symptom_codes: ["R05", "R509", "R0602", "J069", "R0981", "R5383"]
                .map(String::from)
                .to_vec(),
            covid_codes: vec!["U071".into()],
            other_admission_code: "S72001A".into(),
            intercept: 0.0,
            age_coef: 0.22,
            sex_coef: 0.25,
            noise_code_rate: 0.15,
            routine_weight: 1.0,
            extra_claims_mean: 3.0,
            code_zipf: 1.1,
            indeterminate_rate: 0.01,
            age_buckets: AgeBuckets::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn covid_code_set(&self) -> Result<BTreeSet<MedicalCode>> {
        self.covid_codes
            .iter()
            .map(|c| parse_code(CodeSystem::Diagnosis, c))
            .collect()
    }
}

/// Draws unique synthetic codes, avoiding risk ranges where required.
struct PoolBuilder<'a> {
    map: &'a RiskFactorMap,
    rng: Rng,
    used: BTreeSet<String>,
}

impl<'a> PoolBuilder<'a> {
    fn new(map: &'a RiskFactorMap, seed: u64) -> Self {
        PoolBuilder {
            map,
            rng: Rng::derived(seed, 0x9001, 0),
            used: BTreeSet::new(),
        }
    }

    fn claim(&mut self, sys: CodeSystem, candidate: String) -> Option<String> {
        let code = parse_code(sys, &candidate).ok()?;
        (!self.used.contains(code.value())).then(|| {
            self.used.insert(code.value().to_string());
            code.value().to_string()
        })
    }

    /// Diagnosis codes whose 3-character category lies in one of `ranges`
    /// (prefixes of length 3 or 4).
    fn dx_in_ranges(&mut self, ranges: &[(String, String)], n: usize) -> Vec<String> {
        let mut out = Vec::with_capacity(n);
        let mut attempts = 0;
        while out.len() < n {
            attempts += 1;
            assert!(attempts < 100_000, "cannot fill diagnosis pool from {ranges:?}");
            let (lo, hi) = &ranges[self.rng.index(ranges.len())];
            let prefix = random_between(&mut self.rng, lo, hi);
            let suffix_len = if prefix.len() >= 4 { self.rng.index(3) } else { 1 + self.rng.index(2) };
            let mut code = prefix;
            for _ in 0..suffix_len {
                code.push(char::from(b'0' + self.rng.index(10) as u8));
            }
            if let Some(c) = self.claim(CodeSystem::Diagnosis, code) {
                out.push(c);
            }
        }
        out
    }

    fn px_in_ranges(&mut self, ranges: &[(String, String)], n: usize) -> Vec<String> {
        let mut out = Vec::with_capacity(n);
        let mut attempts = 0;
        while out.len() < n {
            attempts += 1;
            assert!(attempts < 100_000, "cannot fill procedure pool from {ranges:?}");
            let (lo, hi) = &ranges[self.rng.index(ranges.len())];
            let code = random_between(&mut self.rng, lo, hi);
            if let Some(c) = self.claim(CodeSystem::Procedure, code) {
                out.push(c);
            }
        }
        out
    }

    /// Procedure codes outside every risk range.
    fn free_px(&mut self, n: usize) -> Vec<String> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let candidate = if self.rng.bernoulli(0.5) {
                format!("{:05}", 10_000 + self.rng.below(80_000))
            } else {
                let letter = b"AEGJ"[self.rng.index(4)] as char;
                format!("{letter}{:04}", self.rng.below(10_000))
            };
            let code = parse_code(CodeSystem::Procedure, &candidate).expect("well-formed");
            if self.map.is_risk_code(&code) {
                continue;
            }
            if let Some(c) = self.claim(CodeSystem::Procedure, candidate) {
                out.push(c);
            }
        }
        out
    }

    fn free_rx(&mut self, n: usize) -> Vec<String> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let candidate = format!("{:011}", self.rng.below(100_000_000_000));
            if let Some(c) = self.claim(CodeSystem::Medication, candidate) {
                out.push(c);
            }
        }
        out
    }
}

/// Uniform string between two equal-length alphanumeric bounds, treating each
/// position as a digit in base 36.
fn random_between(rng: &mut Rng, lo: &str, hi: &str) -> String {
    fn to_num(s: &str) -> u64 {
        s.bytes().fold(0, |acc, b| acc * 36 + u64::from(base36(b)))
    }
    fn base36(b: u8) -> u8 {
        if b.is_ascii_digit() {
            b - b'0'
        } else {
            b - b'A' + 10
        }
    }
    loop {
        let (a, b) = (to_num(lo), to_num(hi));
        let mut v = a + rng.below(b - a + 1);
        let mut chars = vec![0u8; lo.len()];
        for slot in chars.iter_mut().rev() {
            let d = (v % 36) as u8;
            *slot = if d < 10 { b'0' + d } else { b'A' + d - 10 };
            v /= 36;
        }
        // Keep the character classes of the bounds (letter vs digit).
        let ok = chars.iter().zip(lo.bytes()).all(|(c, l)| c.is_ascii_digit() == l.is_ascii_digit());
        if ok {
            return String::from_utf8(chars).expect("ascii");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_between_stays_in_bounds() {
        let mut rng = Rng::new(1);
        for _ in 0..500 {
            let s = random_between(&mut rng, "C00", "D49");
            assert!(("C00"..="D49").contains(&s.as_str()), "{s}");
            assert!(s.as_bytes()[1].is_ascii_digit());
            let p = random_between(&mut rng, "90935", "90999");
            assert!(("90935"..="90999").contains(&p.as_str()), "{p}");
        }
    }

    #[test]
    fn default_layout_is_disjoint_and_typed() {
        let cfg = GeneratorConfig::uncalibrated(1, &RiskFactorMap::default());
        assert_eq!(cfg.profiles.len(), 40);
        let mut seen = BTreeSet::new();
        let map = RiskFactorMap::default();
        for (i, p) in cfg.profiles.iter().enumerate() {
            for c in &p.dx_pool {
                assert!(seen.insert(format!("DX{c}")));
                let code = parse_code(CodeSystem::Diagnosis, c).unwrap();
                if i < 25 {
                    assert_eq!(map.lookup(&code), vec![i], "{c} in {}", p.name);
                } else {
                    assert!(!map.is_risk_code(&code), "{c} in {}", p.name);
                }
            }
            for c in &p.px_pool {
                assert!(seen.insert(format!("PX{c}")));
                let code = parse_code(CodeSystem::Procedure, c).unwrap();
                assert!(!map.is_risk_code(&code) || map.lookup(&code) == vec![i]);
            }
            for c in &p.rx_pool {
                assert!(seen.insert(format!("RX{c}")));
            }
        }
        let total: usize = cfg.profiles.iter().map(|p| p.dx_pool.len() + p.px_pool.len() + p.rx_pool.len()).sum::<usize>()
            + cfg.noise.dx.len() + cfg.noise.px.len() + cfg.noise.rx.len();
        assert!((1_100..=1_300).contains(&total), "{total}");
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = GeneratorConfig::uncalibrated(3, &RiskFactorMap::default());
        let js = serde_json::to_string(&cfg).unwrap();
        assert_eq!(GeneratorConfig::from_json(&js).unwrap(), cfg);
        let partial: GeneratorConfig = serde_json::from_str(r#"{"seed": 9, "profiles": []}"#).unwrap();
        assert_eq!(partial.seed, 9);
    }
}
