use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::granularity::Granularity;

pub const PAD: &str = "[PAD]";
pub const EOS: &str = "[EOS]";
pub const UNK: &str = "[UNK]";

/// Closed recognition alphabet: digits then lowercase letters.
pub const ALPHABET: &str = "0123456789abcdefghijklmnopqrstuvwxyz";

/// WordPiece continuation marker.
pub const CONTINUATION: &str = "##";

pub fn is_alphabet_char(c: char) -> bool {
    c.is_ascii_digit() || c.is_ascii_lowercase()
}

/// Rejects empty words and characters outside [`ALPHABET`].
pub fn validate_word(text: &str) -> Result<()> {
    if text.is_empty() {
        return Err(Error::Alphabet("empty text".into()));
    }
    if let Some(c) = text.chars().find(|c| !is_alphabet_char(*c)) {
        return Err(Error::Alphabet(format!(
            "character {c:?} in {text:?} is outside the lowercase alphanumeric alphabet"
        )));
    }
    Ok(())
}

/// Ordered symbol table; a token's id is its position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    granularity: Granularity,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    pad_id: usize,
    eos_id: usize,
    unk_id: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    granularity: Granularity,
    tokens: Vec<String>,
    specials: Specials,
}

#[derive(Serialize, Deserialize)]
struct Specials {
    pad: String,
    eos: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    unk: Option<String>,
}

impl Vocabulary {
    /// Builds a vocabulary whose leading entries are the specials
    /// (`[PAD]`, `[EOS]`, and `[UNK]` for subword granularities).
    pub fn new(granularity: Granularity, body: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut tokens = vec![PAD.to_string(), EOS.to_string()];
        if granularity != Granularity::Char {
            tokens.push(UNK.to_string());
        }
        tokens.extend(body);
        Self::from_tokens(granularity, tokens)
    }

    fn from_tokens(granularity: Granularity, tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate token {t:?} in vocabulary")));
            }
        }
        let pad_id = *index
            .get(PAD)
            .ok_or_else(|| Error::Config("vocabulary lacks [PAD]".into()))?;
        let eos_id = *index
            .get(EOS)
            .ok_or_else(|| Error::Config("vocabulary lacks [EOS]".into()))?;
        let unk_id = index.get(UNK).copied();
        match (granularity, unk_id) {
            (Granularity::Char, Some(_)) => {
                return Err(Error::Config("character vocabulary must not contain [UNK]".into()))
            }
            (Granularity::Bpe | Granularity::WordPiece, None) => {
                return Err(Error::Config("subword vocabulary lacks [UNK]".into()))
            }
            _ => {}
        }
        Ok(Self {
            granularity,
            tokens,
            index,
            pad_id,
            eos_id,
            unk_id,
        })
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn pad_id(&self) -> usize {
        self.pad_id
    }

    pub fn eos_id(&self) -> usize {
        self.eos_id
    }

    pub fn unk_id(&self) -> Option<usize> {
        self.unk_id
    }

    pub fn is_special(&self, id: usize) -> bool {
        id == self.pad_id || id == self.eos_id || Some(id) == self.unk_id
    }

    /// Surface text of one token: specials render empty and the WordPiece
    /// continuation marker is stripped.
    pub fn surface(&self, id: usize) -> &str {
        if self.is_special(id) {
            return "";
        }
        let tok = self.token(id).unwrap_or("");
        match self.granularity {
            Granularity::WordPiece => tok.strip_prefix(CONTINUATION).unwrap_or(tok),
            _ => tok,
        }
    }

    /// Concatenates token surfaces up to (excluding) the first eos.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .take_while(|&&id| id != self.eos_id)
            .map(|&id| self.surface(id))
            .collect()
    }

    pub fn to_json(&self) -> String {
        let file = VocabFile {
            granularity: self.granularity,
            tokens: self.tokens.clone(),
            specials: Specials {
                pad: PAD.into(),
                eos: EOS.into(),
                unk: self.unk_id.map(|_| UNK.to_string()),
            },
        };
        let mut s = serde_json::to_string_pretty(&file).expect("vocabulary serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        let file: VocabFile = serde_json::from_str(text)?;
        if file.specials.pad != PAD
            || file.specials.eos != EOS
            || file.specials.unk.as_deref().is_some_and(|u| u != UNK)
        {
            return Err(serde::de::Error::custom("unsupported special token names"));
        }
        Self::from_tokens(file.granularity, file.tokens).map_err(serde::de::Error::custom)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::json(path, e))
    }
}

/// Fixed-length id sequence: tokens, eos, then padding up to T.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    /// Non-pad entries including the eos.
    pub length: usize,
}

impl TokenSequence {
    /// Appends eos to `ids` and pads to `max_len`.
    pub fn pack(mut ids: Vec<usize>, vocab: &Vocabulary, max_len: usize) -> Result<Self> {
        if ids.len() + 1 > max_len {
            return Err(Error::Length(format!(
                "{} tokens plus eos exceed the maximum length {max_len}",
                ids.len()
            )));
        }
        ids.push(vocab.eos_id());
        let length = ids.len();
        ids.resize(max_len, vocab.pad_id());
        Ok(Self { ids, length })
    }

    /// Ids before the eos.
    pub fn content(&self) -> &[usize] {
        &self.ids[..self.length - 1]
    }
}
