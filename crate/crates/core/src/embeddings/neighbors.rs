use super::table::EmbeddingTable;
use crate::error::{Error, Result};

/// Unit-normalized copies of the code rows, grouped by token kind.
///
/// Rows with zero norm stay zero and so have cosine 0 with everything.
#[derive(Clone, Debug)]
pub struct NeighborIndex<'a> {
    table: &'a EmbeddingTable,
    unit: Vec<f64>,
}

impl<'a> NeighborIndex<'a> {
    pub fn new(table: &'a EmbeddingTable) -> Self {
        let dim = table.dim();
        let mut unit: Vec<f64> = table.as_slice().iter().map(|&x| f64::from(x)).collect();
        for row in unit.chunks_exact_mut(dim) {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|x| *x /= norm);
            }
        }
        NeighborIndex { table, unit }
    }

    fn unit_row(&self, id: u32) -> &[f64] {
        let dim = self.table.dim();
        &self.unit[id as usize * dim..(id as usize + 1) * dim]
    }

    pub fn cosine(&self, a: u32, b: u32) -> f64 {
        self.unit_row(a)
            .iter()
            .zip(self.unit_row(b))
            .map(|(x, y)| x * y)
            .sum()
    }

    /// Most similar other code of the same kind as `id`. Ties go to the
    /// lower token id.
    pub fn nearest(&self, id: u32) -> Result<(u32, f64)> {
        self.nearest_in(id, true)
    }

    /// Like [`nearest`](Self::nearest); with `same_kind` false any code
    /// token is a candidate.
    pub fn nearest_in(&self, id: u32, same_kind: bool) -> Result<(u32, f64)> {
        let vocab = self.table.vocab();
        let kind = vocab.kind(id);
        let no_candidate = || Error::NoCandidate {
            kind: format!("{kind:?}"),
            token: vocab.surface(id).to_string(),
        };
        if !kind.is_code() {
            return Err(no_candidate());
        }
        let mut best: Option<(u32, f64)> = None;
        for other in 0..vocab.len() as u32 {
            let k = vocab.kind(other);
            if other == id || !k.is_code() || (same_kind && k != kind) {
                continue;
            }
            let sim = self.cosine(id, other);
            if best.is_none_or(|(_, s)| sim > s) {
                best = Some((other, sim));
            }
        }
        best.ok_or_else(no_candidate)
    }

    /// The `k` most similar codes of the same kind, best first.
    pub fn top_k(&self, id: u32, k: usize) -> Vec<(u32, f64)> {
        let vocab = self.table.vocab();
        let kind = vocab.kind(id);
        if !kind.is_code() {
            return Vec::new();
        }
        let mut all: Vec<(u32, f64)> = vocab
            .ids_of_kind(kind)
            .filter(|&o| o != id)
            .map(|o| (o, self.cosine(id, o)))
            .collect();
        all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }
}

/// Nearest same-kind code for a single token. Builds a fresh index, so
/// prefer [`NeighborIndex`] for repeated queries.
pub fn nearest_code(token_id: u32, table: &EmbeddingTable) -> Result<(u32, f64)> {
    NeighborIndex::new(table).nearest(token_id)
}
