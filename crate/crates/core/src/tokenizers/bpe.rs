//! Byte-pair encoding over the closed character alphabet.
//!
//! Training starts from single characters and repeatedly merges the most
//! frequent adjacent pair across the frequency-weighted corpus. Ties go to the
//! lexicographically smallest `(left, right)` pair, and training stops once no
//! unmerged pair occurs at least twice. Labels are single words, so there is
//! no end-of-word marker.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use crate::error::{Error, Result};
use crate::granularity::Granularity;
use crate::tokenizers::vocab::{validate_word, Vocabulary, ALPHABET};
use crate::tokenizers::Tokenizer;

pub const DEFAULT_NUM_MERGES: usize = 256;

/// Ordered merge rules; rule `i` is applied before rule `i + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MergeTable {
    merges: Vec<(String, String)>,
}

impl MergeTable {
    pub fn new(merges: Vec<(String, String)>) -> Result<Self> {
        let mut seen = HashSet::new();
        for pair in &merges {
            if !seen.insert(pair) {
                return Err(Error::Config(format!("duplicate merge {pair:?}")));
            }
        }
        Ok(Self { merges })
    }

    pub fn len(&self) -> usize {
        self.merges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.merges.is_empty()
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.merges
    }

    /// Applies every rule in order, each exhaustively left to right.
    pub fn apply(&self, pieces: &mut Vec<String>) {
        for (left, right) in &self.merges {
            merge_pair(pieces, left, right);
        }
    }

    pub fn to_json(&self) -> String {
        let pairs: Vec<[&str; 2]> = self
            .merges
            .iter()
            .map(|(l, r)| [l.as_str(), r.as_str()])
            .collect();
        let mut s = serde_json::to_string_pretty(&pairs).expect("merges serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        let pairs: Vec<[String; 2]> = serde_json::from_str(text)?;
        Self::new(pairs.into_iter().map(|[l, r]| (l, r)).collect())
            .map_err(serde::de::Error::custom)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::json(path, e))
    }
}

/// Replaces every adjacent `(left, right)` occurrence, scanning left to right.
fn merge_pair(pieces: &mut Vec<String>, left: &str, right: &str) {
    if pieces.len() < 2 {
        return;
    }
    let mut out = Vec::with_capacity(pieces.len());
    let mut i = 0;
    while i < pieces.len() {
        if i + 1 < pieces.len() && pieces[i] == left && pieces[i + 1] == right {
            out.push(format!("{left}{right}"));
            i += 2;
        } else {
            out.push(std::mem::take(&mut pieces[i]));
            i += 1;
        }
    }
    *pieces = out;
}

fn word_counts<S: AsRef<str>>(corpus: &[S]) -> Result<BTreeMap<String, usize>> {
    if corpus.is_empty() {
        return Err(Error::Corpus("empty corpus".into()));
    }
    let mut counts = BTreeMap::new();
    for w in corpus {
        let w = w.as_ref();
        validate_word(w).map_err(|e| Error::Corpus(e.to_string()))?;
        *counts.entry(w.to_string()).or_insert(0) += 1;
    }
    Ok(counts)
}

/// Learns up to `num_merges` merge rules from `corpus`.
///
/// The vocabulary is the specials, all 36 alphabet characters, then each new
/// merged token in the order it was learned.
pub fn bpe_train<S: AsRef<str>>(corpus: &[S], num_merges: usize) -> Result<(Vocabulary, MergeTable)> {
    let counts = word_counts(corpus)?;
    let mut words: Vec<(Vec<String>, usize)> = counts
        .iter()
        .map(|(w, &n)| (w.chars().map(String::from).collect(), n))
        .collect();
    let mut merges: Vec<(String, String)> = Vec::new();
    let mut merged: HashSet<(String, String)> = HashSet::new();
    let mut body: Vec<String> = ALPHABET.chars().map(String::from).collect();
    let mut known: HashSet<String> = body.iter().cloned().collect();

    while merges.len() < num_merges {
        let mut pair_counts: HashMap<(&str, &str), usize> = HashMap::new();
        for (pieces, n) in &words {
            for w in pieces.windows(2) {
                *pair_counts.entry((&w[0], &w[1])).or_insert(0) += n;
            }
        }
        let best = pair_counts
            .into_iter()
            .filter(|((l, r), _)| !merged.contains(&(l.to_string(), r.to_string())))
            .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)));
        let Some(((l, r), count)) = best else { break };
        if count < 2 {
            break;
        }
        let pair = (l.to_string(), r.to_string());
        for (pieces, _) in &mut words {
            merge_pair(pieces, &pair.0, &pair.1);
        }
        let token = format!("{}{}", pair.0, pair.1);
        if known.insert(token.clone()) {
            body.push(token);
        }
        merged.insert(pair.clone());
        merges.push(pair);
    }

    let vocab = Vocabulary::new(Granularity::Bpe, body)?;
    Ok((vocab, MergeTable::new(merges)?))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeTokenizer {
    vocab: Vocabulary,
    merges: MergeTable,
}

impl BpeTokenizer {
    pub fn new(vocab: Vocabulary, merges: MergeTable) -> Result<Self> {
        if vocab.granularity() != Granularity::Bpe {
            return Err(Error::Config(format!(
                "expected a bpe vocabulary, got {}",
                vocab.granularity()
            )));
        }
        Ok(Self { vocab, merges })
    }

    pub fn train<S: AsRef<str>>(corpus: &[S], num_merges: usize) -> Result<Self> {
        let (vocab, merges) = bpe_train(corpus, num_merges)?;
        Self::new(vocab, merges)
    }

    pub fn merges(&self) -> &MergeTable {
        &self.merges
    }
}

impl Tokenizer for BpeTokenizer {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn tokenize(&self, text: &str) -> Result<Vec<String>> {
        validate_word(text)?;
        let mut pieces = text.chars().map(String::from).collect();
        self.merges.apply(&mut pieces);
        Ok(pieces)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strs(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn low_lower_merges() {
        let (vocab, merges) = bpe_train(&["low", "low", "lower"], 2).unwrap();
        assert_eq!(
            merges.pairs(),
            &[
                ("l".to_string(), "o".to_string()),
                ("lo".to_string(), "w".to_string())
            ]
        );
        assert!(vocab.contains("lo") && vocab.contains("low"));
        let tok = BpeTokenizer::new(vocab, merges).unwrap();
        assert_eq!(tok.tokenize("lower").unwrap(), strs(&["low", "e", "r"]));
    }

    #[test]
    fn zero_merges_is_specials_plus_alphabet() {
        let (vocab, merges) = bpe_train(&["abc"], 0).unwrap();
        assert!(merges.is_empty());
        assert_eq!(vocab.len(), 3 + 36);
    }

    #[test]
    fn stops_when_no_pair_repeats() {
        let (_, merges) = bpe_train(&["ab", "cd"], 10).unwrap();
        assert!(merges.is_empty());
    }

    #[test]
    fn ties_prefer_smallest_pair() {
        // (a,b) and (c,d) both occur twice.
        let (_, merges) = bpe_train(&["cd", "ab", "cd", "ab"], 1).unwrap();
        assert_eq!(merges.pairs()[0], ("a".to_string(), "b".to_string()));
    }

    #[test]
    fn single_char_and_length_limit() {
        let tok = BpeTokenizer::train(&["aa", "aa"], 4).unwrap();
        assert_eq!(tok.tokenize("a").unwrap(), strs(&["a"]));
        let seq = tok.encode("a", 4).unwrap();
        assert_eq!(seq.length, 2);
        assert_eq!(seq.ids[1], tok.vocab().eos_id());
        assert!(matches!(tok.encode("abcd", 4), Err(Error::Length(_))));
        assert_eq!(tok.encode("aaaa", 4).unwrap().length, 3);
    }

    #[test]
    fn conditional_reference_segmentation() {
        let vocab = Vocabulary::new(
            Granularity::Bpe,
            ALPHABET
                .chars()
                .map(String::from)
                .chain(strs(&["vi", "vis", "viso", "visor", "visory"])),
        )
        .unwrap();
        let merges = MergeTable::new(vec![
            ("v".into(), "i".into()),
            ("vi".into(), "s".into()),
            ("vis".into(), "o".into()),
            ("viso".into(), "r".into()),
            ("visor".into(), "y".into()),
        ])
        .unwrap();
        let tok = BpeTokenizer::new(vocab, merges).unwrap();
        assert_eq!(tok.tokenize("dvisory").unwrap(), strs(&["d", "visory"]));
    }

    #[test]
    fn empty_or_invalid_corpus() {
        let empty: [&str; 0] = [];
        assert!(matches!(bpe_train(&empty, 3), Err(Error::Corpus(_))));
        assert!(matches!(bpe_train(&["ok", "NO"], 3), Err(Error::Corpus(_))));
    }

    #[test]
    fn merges_json_round_trip() {
        let (_, merges) = bpe_train(&["low", "low", "lower", "newest", "newest"], 10).unwrap();
        assert_eq!(MergeTable::from_json(&merges.to_json()).unwrap(), merges);
    }
}
