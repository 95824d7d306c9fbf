use std::sync::OnceLock;

use crate::claims::{MedicalCode, PatientHistory};
use crate::embeddings::{EmbeddingTable, NeighborIndex};
use crate::narrative::{code_of_surface, code_surface};

/// Chooses a replacement for one code occurrence. `None` leaves the code
/// unchanged and marks it unknown.
pub trait Perturber: Sync {
    fn replace(&self, code: &MedicalCode) -> Option<MedicalCode>;
}

/// Maps every code to itself.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityPerturber;

impl Perturber for IdentityPerturber {
    fn replace(&self, code: &MedicalCode) -> Option<MedicalCode> {
        Some(code.clone())
    }
}

/// Replaces each code with its nearest same-kind neighbour in an embedding
/// table. Neighbours are computed once per token, on first use.
pub struct EmbeddingPerturber<'a> {
    table: &'a EmbeddingTable,
    index: NeighborIndex<'a>,
    cache: Vec<OnceLock<Option<u32>>>,
}

impl<'a> EmbeddingPerturber<'a> {
    pub fn new(table: &'a EmbeddingTable) -> Self {
        EmbeddingPerturber {
            table,
            index: NeighborIndex::new(table),
            cache: (0..table.vocab().len()).map(|_| OnceLock::new()).collect(),
        }
    }

    pub fn table(&self) -> &EmbeddingTable {
        self.table
    }
}

impl Perturber for EmbeddingPerturber<'_> {
    fn replace(&self, code: &MedicalCode) -> Option<MedicalCode> {
        let vocab = self.table.vocab();
        let id = vocab.get(&code_surface(code))?;
        let nearest = *self.cache[id as usize].get_or_init(|| self.index.nearest(id).ok().map(|(n, _)| n));
        code_of_surface(vocab.surface(nearest?))
    }
}

/// A history and its perturbation. `substitutions` holds one entry per
/// replaced code occurrence in claim order; `unknown` the occurrences left
/// as they were.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbedPair {
    pub original: PatientHistory,
    pub perturbed: PatientHistory,
    pub substitutions: Vec<(MedicalCode, MedicalCode)>,
    pub unknown: Vec<MedicalCode>,
}

impl PerturbedPair {
    /// Replacement of `code`, or the code itself when it was not substituted.
    pub fn partner<'a>(&'a self, code: &'a MedicalCode) -> &'a MedicalCode {
        self.substitutions
            .iter()
            .find(|(from, _)| from == code)
            .map_or(code, |(_, to)| to)
    }
}

pub fn perturb_with<P: Perturber + ?Sized>(history: &PatientHistory, perturber: &P) -> PerturbedPair {
    let mut substitutions = Vec::new();
    let mut unknown = Vec::new();
    let claims = history
        .claims
        .iter()
        .map(|claim| {
            claim
                .map_codes(|code| match perturber.replace(code) {
                    Some(new) => {
                        substitutions.push((code.clone(), new.clone()));
                        Some(new)
                    }
                    None => {
                        unknown.push(code.clone());
                        Some(code.clone())
                    }
                })
                .expect("every code is kept")
        })
        .collect();
    PerturbedPair {
        original: history.clone(),
        perturbed: history.with_claims(claims),
        substitutions,
        unknown,
    }
}

/// Substitutes every code with its nearest same-kind code in `table`.
pub fn perturb_history(history: &PatientHistory, table: &EmbeddingTable) -> PerturbedPair {
    perturb_with(history, &EmbeddingPerturber::new(table))
}
