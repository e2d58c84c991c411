//! WordPiece units and greedy longest-match-first segmentation.
//!
//! Training is frequency-greedy. The vocabulary is seeded with every alphabet
//! character both bare (word-initial) and `##`-prefixed (continuation). Each
//! round segments the corpus with the current vocabulary, counts adjacent
//! unit pairs weighted by word frequency and adds the most frequent
//! concatenation. Ties go to the lexicographically smallest surface string,
//! and a word-initial unit beats a continuation unit with the same surface.
//!
//! A candidate is rejected if it would lengthen the segmentation of any
//! corpus word (greedy matching is not monotone in general). Learned units
//! that stop being used by any corpus word are dropped and never re-added.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};

use crate::error::{Error, Result};
use crate::granularity::Granularity;
use crate::tokenizers::vocab::{validate_word, Vocabulary, ALPHABET, CONTINUATION, UNK};
use crate::tokenizers::Tokenizer;

pub const DEFAULT_VOCAB_SIZE: usize = 512;

/// Specials (3) plus bare and continuation forms of the 36 characters.
pub const SEED_SIZE: usize = 3 + 2 * 36;

/// Greedy longest-match-first split of `word`, or `None` when some position
/// has no matching unit.
pub fn greedy_segment(word: &str, contains: impl Fn(&str) -> bool) -> Option<Vec<String>> {
    let chars: Vec<char> = word.chars().collect();
    let mut pieces = Vec::new();
    let mut start = 0;
    let mut buf = String::new();
    while start < chars.len() {
        let mut found = None;
        for end in (start + 1..=chars.len()).rev() {
            buf.clear();
            if start > 0 {
                buf.push_str(CONTINUATION);
            }
            buf.extend(&chars[start..end]);
            if contains(&buf) {
                found = Some(end);
                break;
            }
        }
        let end = found?;
        pieces.push(buf.clone());
        start = end;
    }
    Some(pieces)
}

fn seed_units() -> Vec<String> {
    let bare = ALPHABET.chars().map(String::from);
    let cont = ALPHABET.chars().map(|c| format!("{CONTINUATION}{c}"));
    bare.chain(cont).collect()
}

fn concat(left: &str, right: &str) -> String {
    format!("{left}{}", right.strip_prefix(CONTINUATION).unwrap_or(right))
}

/// Candidate order: count descending, then surface ascending, then bare
/// before continuation.
fn candidate_order(a: &(String, usize), b: &(String, usize)) -> Ordering {
    let key = |s: &str| {
        let stripped = s.strip_prefix(CONTINUATION);
        (stripped.unwrap_or(s).to_string(), stripped.is_some())
    };
    b.1.cmp(&a.1).then_with(|| key(&a.0).cmp(&key(&b.0)))
}

struct Trainer {
    words: Vec<(String, usize)>,
    units: HashSet<String>,
    learned: Vec<String>,
    banned: HashSet<String>,
}

impl Trainer {
    fn segment_all(&self, units: &HashSet<String>) -> Vec<Vec<String>> {
        self.words
            .iter()
            .map(|(w, _)| greedy_segment(w, |u| units.contains(u)).expect("seeded alphabet"))
            .collect()
    }

    fn candidates(&self, segs: &[Vec<String>]) -> Vec<(String, usize)> {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for (pieces, (_, n)) in segs.iter().zip(&self.words) {
            for w in pieces.windows(2) {
                *counts.entry(concat(&w[0], &w[1])).or_insert(0) += n;
            }
        }
        let mut cands: Vec<_> = counts
            .into_iter()
            .filter(|(c, _)| !self.units.contains(c) && !self.banned.contains(c))
            .collect();
        cands.sort_by(candidate_order);
        cands
    }

    fn prune_unused(&mut self, segs: &[Vec<String>]) {
        let used: HashSet<&str> = segs.iter().flatten().map(String::as_str).collect();
        let (keep, drop): (Vec<String>, Vec<String>) = self
            .learned
            .drain(..)
            .partition(|u| used.contains(u.as_str()));
        for u in drop {
            self.units.remove(&u);
            self.banned.insert(u);
        }
        self.learned = keep;
    }

    /// Adds the best admissible candidate. Returns false when none is left.
    fn step(&mut self) -> bool {
        let segs = self.segment_all(&self.units);
        for (cand, _) in self.candidates(&segs) {
            let mut trial = self.units.clone();
            trial.insert(cand.clone());
            let new_segs = self.segment_all(&trial);
            let lengthens = new_segs.iter().zip(&segs).any(|(n, o)| n.len() > o.len());
            if lengthens {
                self.banned.insert(cand);
                continue;
            }
            self.units = trial;
            self.learned.push(cand);
            self.prune_unused(&new_segs);
            return true;
        }
        false
    }
}

/// Builds a WordPiece vocabulary of at most `vocab_size` entries (specials
/// included). Stops early when no admissible candidate remains.
pub fn wordpiece_train<S: AsRef<str>>(corpus: &[S], vocab_size: usize) -> Result<Vocabulary> {
    if vocab_size < SEED_SIZE {
        return Err(Error::Config(format!(
            "vocab_size {vocab_size} is smaller than the seed inventory {SEED_SIZE}"
        )));
    }
    if corpus.is_empty() {
        return Err(Error::Corpus("empty corpus".into()));
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for w in corpus {
        let w = w.as_ref();
        validate_word(w).map_err(|e| Error::Corpus(e.to_string()))?;
        *counts.entry(w.to_string()).or_insert(0) += 1;
    }
    let seeds = seed_units();
    let mut trainer = Trainer {
        words: counts.into_iter().collect(),
        units: seeds.iter().cloned().collect(),
        learned: Vec::new(),
        banned: HashSet::new(),
    };
    while SEED_SIZE + trainer.learned.len() < vocab_size {
        if !trainer.step() {
            break;
        }
    }
    Vocabulary::new(
        Granularity::WordPiece,
        seeds.into_iter().chain(trainer.learned),
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordPieceTokenizer {
    vocab: Vocabulary,
}

impl WordPieceTokenizer {
    pub fn new(vocab: Vocabulary) -> Result<Self> {
        if vocab.granularity() != Granularity::WordPiece {
            return Err(Error::Config(format!(
                "expected a wp vocabulary, got {}",
                vocab.granularity()
            )));
        }
        Ok(Self { vocab })
    }

    pub fn train<S: AsRef<str>>(corpus: &[S], vocab_size: usize) -> Result<Self> {
        Self::new(wordpiece_train(corpus, vocab_size)?)
    }
}

impl Tokenizer for WordPieceTokenizer {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    /// Greedy longest-match-first; an unmatched position turns the whole word
    /// into a single `[UNK]`.
    fn tokenize(&self, text: &str) -> Result<Vec<String>> {
        if text.is_empty() {
            return Err(Error::Alphabet("empty text".into()));
        }
        Ok(greedy_segment(text, |u| {
            self.vocab.id(u).is_some_and(|id| !self.vocab.is_special(id))
        })
            .unwrap_or_else(|| vec![UNK.to_string()]))
    }
}
