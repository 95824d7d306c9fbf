use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::token::{
    age_lower_bound, age_surface, code_surface, kind_of, sex_surface, TokenKind, SPECIALS,
    UNK_ID,
};
use crate::claims::{AgeBuckets, Claim, PatientHistory, Sex};
use crate::error::{Error, Result};

pub const DEFAULT_MIN_COUNT: u64 = 5;

/// Token ↔ id map. Ids 0-3 are `[PAD] [UNK] [CLS] [MASK]`; the rest are
/// ordered by descending corpus frequency, ties broken by surface.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    surfaces: Vec<String>,
    kinds: Vec<TokenKind>,
    freqs: Vec<u64>,
    index: HashMap<String, u32>,
    min_count: u64,
    ages: AgeBuckets,
}

fn claim_surfaces<'a>(claim: &'a Claim, age: &'a str, sex: &'a str) -> impl Iterator<Item = String> + 'a {
    [age.to_string(), sex.to_string()]
        .into_iter()
        .chain(claim.codes().map(code_surface))
}

impl Vocabulary {
    fn from_entries(entries: Vec<(String, u64)>, min_count: u64, ages: AgeBuckets) -> Result<Self> {
        let mut surfaces = Vec::with_capacity(entries.len());
        let mut kinds = Vec::with_capacity(entries.len());
        let mut freqs = Vec::with_capacity(entries.len());
        let mut index = HashMap::with_capacity(entries.len());
        for (surface, freq) in entries {
            let kind = kind_of(&surface)
                .ok_or_else(|| Error::Invalid(format!("unrecognized token surface {surface:?}")))?;
            let id = surfaces.len() as u32;
            if index.insert(surface.clone(), id).is_some() {
                return Err(Error::Invalid(format!("duplicate token {surface:?}")));
            }
            surfaces.push(surface);
            kinds.push(kind);
            freqs.push(freq);
        }
        Ok(Vocabulary {
            surfaces,
            kinds,
            freqs,
            index,
            min_count,
            ages,
        })
    }

    pub fn build(corpus: &[PatientHistory], min_count: u64, ages: &AgeBuckets) -> Result<Self> {
        let mut counts: HashMap<String, u64> = HashMap::new();
        let mut n_claims = 0usize;
        for h in corpus {
            let age = age_surface(ages.discretize(h.age_years));
            let sex = sex_surface(h.sex);
            for claim in &h.claims {
                n_claims += 1;
                for s in claim_surfaces(claim, &age, &sex) {
                    *counts.entry(s).or_default() += 1;
                }
            }
        }
        if n_claims == 0 {
            return Err(Error::Empty("vocabulary corpus has no claims"));
        }
        for b in ages.iter() {
            counts.entry(age_surface(b)).or_default();
        }
        for s in [Sex::F, Sex::M] {
            counts.entry(sex_surface(s)).or_default();
        }
        let mut body: Vec<(String, u64)> = counts
            .into_iter()
            .filter(|(s, c)| {
                let kind = kind_of(s).expect("surfaces built from typed codes");
                !kind.is_code() || *c >= min_count
            })
            .collect();
        body.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let entries = SPECIALS
            .iter()
            .map(|s| (s.to_string(), 0))
            .chain(body)
            .collect();
        Self::from_entries(entries, min_count, ages.clone())
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    /// Id of `surface`, or `[UNK]`.
    pub fn id(&self, surface: &str) -> u32 {
        self.index.get(surface).copied().unwrap_or(UNK_ID)
    }

    pub fn get(&self, surface: &str) -> Option<u32> {
        self.index.get(surface).copied()
    }

    pub fn surface(&self, id: u32) -> &str {
        &self.surfaces[id as usize]
    }

    pub fn kind(&self, id: u32) -> TokenKind {
        self.kinds[id as usize]
    }

    pub fn frequency(&self, id: u32) -> u64 {
        self.freqs[id as usize]
    }

    pub fn min_count(&self) -> u64 {
        self.min_count
    }

    pub fn age_buckets(&self) -> &AgeBuckets {
        &self.ages
    }

    pub fn age_id(&self, age_years: u32) -> u32 {
        self.id(&age_surface(self.ages.discretize(age_years)))
    }

    pub fn sex_id(&self, sex: Sex) -> u32 {
        self.id(&sex_surface(sex))
    }

    pub fn ids_of_kind(&self, kind: TokenKind) -> impl Iterator<Item = u32> + '_ {
        (0..self.len() as u32).filter(move |&i| self.kinds[i as usize] == kind)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("# min_count={}\n", self.min_count);
        for (i, (s, f)) in self.surfaces.iter().zip(&self.freqs).enumerate() {
            writeln!(out, "{i}\t{s}\t{f}").expect("write to string");
        }
        out
    }

    /// Parses the `id, surface, frequency` format. The age table is recovered
    /// from the `AGE_` tokens; without a `# min_count=` header, `min_count`
    /// is taken from the rarest code token.
    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut header_min_count = None;
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(v) = comment.trim().strip_prefix("min_count=") {
                    header_min_count = Some(v.trim().parse::<u64>().map_err(|_| Error::Schema {
                        path: "<vocabulary>".into(),
                        line: n + 1,
                        message: format!("bad min_count {v:?}"),
                    })?);
                }
                continue;
            }
            let bad = |m: String| Error::Schema {
                path: "<vocabulary>".into(),
                line: n + 1,
                message: m,
            };
            let cols: Vec<&str> = line.split('\t').collect();
            let [id, surface, freq] = cols[..] else {
                return Err(bad(format!("expected 3 columns, found {}", cols.len())));
            };
            let id: usize = id.parse().map_err(|_| bad(format!("bad id {id:?}")))?;
            if id != entries.len() {
                return Err(bad(format!("ids must be dense and sorted; expected {}", entries.len())));
            }
            let freq: u64 = freq.parse().map_err(|_| bad(format!("bad frequency {freq:?}")))?;
            entries.push((surface.to_string(), freq));
        }
        if entries.len() < SPECIALS.len()
            || entries.iter().zip(SPECIALS).any(|((s, _), want)| s != want)
        {
            return Err(Error::Invalid("vocabulary must start with the four special tokens".into()));
        }
        let mut bounds: Vec<u32> = entries
            .iter()
            .filter_map(|(s, _)| age_lower_bound(s))
            .collect();
        bounds.sort_unstable();
        let ages = AgeBuckets::from_lower_bounds(&bounds)?;
        let min_count = header_min_count.unwrap_or_else(|| entries
            .iter()
            .filter(|(s, _)| kind_of(s).is_some_and(TokenKind::is_code))
            .map(|(_, f)| *f)
            .min()
            .unwrap_or(0));
        Self::from_entries(entries, min_count, ages)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_tsv(&text).map_err(|e| match e {
            Error::Schema { line, message, .. } => Error::Schema {
                path: path.to_path_buf(),
                line,
                message,
            },
            other => other,
        })
    }

    /// SHA-256 of the serialized vocabulary, used to tie models to it.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_tsv().as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

pub fn build_vocab(corpus: &[PatientHistory], min_count: u64, ages: &AgeBuckets) -> Result<Vocabulary> {
    Vocabulary::build(corpus, min_count, ages)
}
