//! Label codecs for the three prediction granularities.

mod bpe;
mod char;
mod vocab;
mod wordpiece;

pub use self::bpe::{bpe_train, BpeTokenizer, MergeTable, DEFAULT_NUM_MERGES};
pub use self::char::CharTokenizer;
pub use self::vocab::{
    is_alphabet_char, validate_word, TokenSequence, Vocabulary, ALPHABET, CONTINUATION, EOS,
    PAD, UNK,
};
pub use self::wordpiece::{
    greedy_segment, wordpiece_train, WordPieceTokenizer, DEFAULT_VOCAB_SIZE, SEED_SIZE,
};

use crate::error::Result;

/// String ↔ fixed-length id sequence.
pub trait Tokenizer {
    fn vocab(&self) -> &Vocabulary;

    /// Splits `text` into vocabulary units (before id lookup).
    fn tokenize(&self, text: &str) -> Result<Vec<String>>;

    /// Units, then eos, then pad up to `max_len`. Units missing from the
    /// vocabulary map to `[UNK]`.
    fn encode(&self, text: &str, max_len: usize) -> Result<TokenSequence> {
        let vocab = self.vocab();
        let ids = self
            .tokenize(text)?
            .iter()
            .map(|t| {
                vocab
                    .id(t)
                    .or(vocab.unk_id())
                    .expect("subword vocabularies carry [UNK]")
            })
            .collect();
        TokenSequence::pack(ids, vocab, max_len)
    }

    fn decode(&self, ids: &[usize]) -> String {
        self.vocab().decode(ids)
    }
}
