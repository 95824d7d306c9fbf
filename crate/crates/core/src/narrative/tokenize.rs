use super::token::{code_surface, TokenKind, CLS_ID};
use super::vocab::Vocabulary;
use crate::claims::{Claim, PatientHistory, Sex};
use crate::rng::{derive_seed, Rng};

pub const DEFAULT_MAX_LEN: usize = 256;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Provenance {
    /// Source claim; `None` for `[CLS]` and demographic tokens.
    pub claim_id: Option<String>,
    pub kind: TokenKind,
}

/// Token ids with per-position provenance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClaimSequence {
    pub ids: Vec<u32>,
    pub provenance: Vec<Provenance>,
}

impl ClaimSequence {
    fn with_capacity(n: usize) -> Self {
        ClaimSequence {
            ids: Vec::with_capacity(n),
            provenance: Vec::with_capacity(n),
        }
    }

    fn push(&mut self, id: u32, claim_id: Option<&str>, kind: TokenKind) {
        self.ids.push(id);
        self.provenance.push(Provenance {
            claim_id: claim_id.map(str::to_string),
            kind,
        });
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn surfaces<'v>(&self, vocab: &'v Vocabulary) -> Vec<&'v str> {
        self.ids.iter().map(|&i| vocab.surface(i)).collect()
    }
}

fn code_tokens(claim: &Claim, vocab: &Vocabulary) -> Vec<(u32, TokenKind)> {
    claim
        .codes()
        .map(|c| (vocab.id(&code_surface(c)), TokenKind::of_system(c.system())))
        .collect()
}

/// `[AGE, SEX] ++ shuffle(codes)`; the shuffle is fixed by `seed`.
pub fn tokenize_claim(claim: &Claim, age_years: u32, sex: Sex, vocab: &Vocabulary, seed: u64) -> ClaimSequence {
    let mut codes = code_tokens(claim, vocab);
    Rng::new(seed).shuffle(&mut codes);
    let mut seq = ClaimSequence::with_capacity(codes.len() + 2);
    seq.push(vocab.age_id(age_years), None, TokenKind::Age);
    seq.push(vocab.sex_id(sex), None, TokenKind::Sex);
    for (id, kind) in codes {
        seq.push(id, Some(&claim.claim_id), kind);
    }
    seq
}

/// `[CLS, AGE, SEX]` followed by every code in chronological order. When the
/// result would exceed `max_len`, the oldest code tokens are dropped.
pub fn tokenize_history(history: &PatientHistory, vocab: &Vocabulary, max_len: usize) -> ClaimSequence {
    assert!(max_len >= 3, "max_len must leave room for [CLS], age and sex");
    let codes: Vec<(u32, TokenKind, &str)> = history
        .claims
        .iter()
        .flat_map(|c| {
            code_tokens(c, vocab)
                .into_iter()
                .map(move |(id, kind)| (id, kind, c.claim_id.as_str()))
        })
        .collect();
    let keep = codes.len().min(max_len - 3);
    let mut seq = ClaimSequence::with_capacity(keep + 3);
    seq.push(CLS_ID, None, TokenKind::Special);
    seq.push(vocab.age_id(history.age_years), None, TokenKind::Age);
    seq.push(vocab.sex_id(history.sex), None, TokenKind::Sex);
    for &(id, kind, claim_id) in &codes[codes.len() - keep..] {
        seq.push(id, Some(claim_id), kind);
    }
    seq
}

/// One shuffled sequence per claim, each shuffle seeded from `seed` and the
/// claim's position in the corpus.
pub fn pretraining_sequences(corpus: &[PatientHistory], vocab: &Vocabulary, seed: u64) -> Vec<ClaimSequence> {
    let mut out = Vec::new();
    for h in corpus {
        for c in &h.claims {
            let s = derive_seed(seed, 0x70c, out.len() as u64);
            out.push(tokenize_claim(c, h.age_years, h.sex, vocab, s));
        }
    }
    out
}
