use crate::error::Result;
use crate::granularity::Granularity;
use crate::tokenizers::vocab::{validate_word, TokenSequence, Vocabulary, ALPHABET};
use crate::tokenizers::Tokenizer;

/// One token per character over the closed 36-symbol alphabet.
///
/// Id layout: pad = 0, eos = 1, '0'..'9' = 2..11, 'a'..'z' = 12..37.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharTokenizer {
    vocab: Vocabulary,
}

impl Default for CharTokenizer {
    fn default() -> Self {
        Self::new()
    }
}

impl CharTokenizer {
    pub fn new() -> Self {
        let vocab = Vocabulary::new(Granularity::Char, ALPHABET.chars().map(String::from))
            .expect("alphabet has no duplicates");
        debug_assert_eq!(vocab.len(), 38);
        Self { vocab }
    }
}

impl Tokenizer for CharTokenizer {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn tokenize(&self, text: &str) -> Result<Vec<String>> {
        validate_word(text)?;
        Ok(text.chars().map(String::from).collect())
    }

    fn encode(&self, text: &str, max_len: usize) -> Result<TokenSequence> {
        validate_word(text)?;
        let ids = text
            .chars()
            .map(|c| self.vocab.id(c.encode_utf8(&mut [0; 4])).expect("validated"))
            .collect();
        TokenSequence::pack(ids, &self.vocab, max_len)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn fixed_id_layout() {
        let tok = CharTokenizer::new();
        let v = tok.vocab();
        assert_eq!(v.len(), 38);
        assert_eq!(v.id("0"), Some(2));
        assert_eq!(v.id("9"), Some(11));
        assert_eq!(v.id("a"), Some(12));
        assert_eq!(v.id("z"), Some(37));
        assert_eq!(v.unk_id(), None);
    }

    #[test]
    fn encode_pads_after_eos() {
        let tok = CharTokenizer::new();
        let seq = tok.encode("ab", 5).unwrap();
        assert_eq!(seq.ids, vec![12, 13, 1, 0, 0]);
        assert_eq!(seq.length, 3);
    }

    #[test]
    fn encode_errors() {
        let tok = CharTokenizer::new();
        assert!(matches!(tok.encode("", 5), Err(Error::Alphabet(_))));
        assert!(matches!(tok.encode("a b", 5), Err(Error::Alphabet(_))));
        assert!(matches!(tok.encode("abcde", 5), Err(Error::Length(_))));
        assert!(tok.encode("abcd", 5).is_ok());
    }

    #[test]
    fn longest_label_fills_t() {
        let tok = CharTokenizer::new();
        let word = "abcdefghijklmnopqrstuvwxyz";
        let seq = tok.encode(word, 27).unwrap();
        assert_eq!(seq.length, 27);
        assert_eq!(seq.ids[26], 1);
    }
}
