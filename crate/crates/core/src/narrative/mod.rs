//! Claims as token sequences over a typed vocabulary.

mod token;
mod tokenize;
mod vocab;

pub use token::{
    age_surface, code_of_surface, code_surface, kind_of, sex_surface, TokenKind, CLS, CLS_ID,
    MASK, MASK_ID, PAD, PAD_ID, SPECIALS, UNK, UNK_ID,
};
pub use tokenize::{
    pretraining_sequences, tokenize_claim, tokenize_history, ClaimSequence, Provenance,
    DEFAULT_MAX_LEN,
};
pub use vocab::{build_vocab, Vocabulary, DEFAULT_MIN_COUNT};

#[cfg(test)]
mod tests;
