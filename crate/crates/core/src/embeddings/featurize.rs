use super::table::EmbeddingTable;
use crate::claims::PatientHistory;
use crate::narrative::{code_surface, TokenKind};

/// Layout: `[mean Dx | mean Px | mean Rx | age ordinal | sex]`.
pub fn feature_len(dim: usize) -> usize {
    3 * dim + 2
}

/// Fixed-length history summary. Every code occurrence counts, so repeated
/// codes weigh more. Codes missing from the vocabulary are skipped; a kind
/// with no known codes contributes zeros.
pub fn featurize_history(history: &PatientHistory, table: &EmbeddingTable) -> Vec<f64> {
    let dim = table.dim();
    let vocab = table.vocab();
    let mut out = vec![0.0; feature_len(dim)];
    let mut counts = [0usize; 3];
    for code in history.codes() {
        let Some(id) = vocab.get(&code_surface(code)) else {
            continue;
        };
        let slot = match vocab.kind(id) {
            TokenKind::Dx => 0,
            TokenKind::Px => 1,
            TokenKind::Rx => 2,
            _ => continue,
        };
        counts[slot] += 1;
        let block = &mut out[slot * dim..(slot + 1) * dim];
        for (o, &x) in block.iter_mut().zip(table.row(id)) {
            *o += f64::from(x);
        }
    }
    for (slot, &n) in counts.iter().enumerate() {
        if n > 0 {
            out[slot * dim..(slot + 1) * dim]
                .iter_mut()
                .for_each(|x| *x /= n as f64);
        }
    }
    out[3 * dim] = vocab.age_buckets().discretize(history.age_years).ordinal as f64;
    out[3 * dim + 1] = history.sex.indicator();
    out
}
