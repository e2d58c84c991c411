//! A model together with the label codecs of its branches.

use std::path::Path;

use crate::backbone::ModelConfig;
use crate::error::{Error, Result};
use crate::fusion::{fuse, FusedResult, FusionMode, Prediction};
use crate::granularity::Granularity;
use crate::model::{MgpStr, ModelOutput};
use crate::nn::Tensor;
use crate::tokenizers::{
    BpeTokenizer, CharTokenizer, MergeTable, TokenSequence, Tokenizer, Vocabulary,
    WordPieceTokenizer,
};
use crate::trainer::checkpoint::{load_checkpoint, save_checkpoint, Sidecars};

pub const BPE_VOCAB_FILE: &str = "bpe_vocab.json";
pub const BPE_MERGES_FILE: &str = "bpe_merges.json";
pub const WP_VOCAB_FILE: &str = "wp_vocab.json";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Codecs {
    pub char: CharTokenizer,
    pub bpe: Option<BpeTokenizer>,
    pub wp: Option<WordPieceTokenizer>,
}

impl Codecs {
    pub fn char_only() -> Self {
        Self {
            char: CharTokenizer::new(),
            bpe: None,
            wp: None,
        }
    }

    /// Trains the subword codecs listed in `heads` on `corpus`.
    pub fn train<S: AsRef<str>>(
        corpus: &[S],
        heads: &[Granularity],
        bpe_merges: usize,
        wp_vocab: usize,
    ) -> Result<Self> {
        let mut c = Self::char_only();
        if heads.contains(&Granularity::Bpe) {
            c.bpe = Some(BpeTokenizer::train(corpus, bpe_merges)?);
        }
        if heads.contains(&Granularity::WordPiece) {
            c.wp = Some(WordPieceTokenizer::train(corpus, wp_vocab)?);
        }
        Ok(c)
    }

    pub fn granularities(&self) -> Vec<Granularity> {
        Granularity::ALL
            .into_iter()
            .filter(|g| self.tokenizer(*g).is_some())
            .collect()
    }

    pub fn tokenizer(&self, g: Granularity) -> Option<&dyn Tokenizer> {
        match g {
            Granularity::Char => Some(&self.char),
            Granularity::Bpe => self.bpe.as_ref().map(|t| t as &dyn Tokenizer),
            Granularity::WordPiece => self.wp.as_ref().map(|t| t as &dyn Tokenizer),
        }
    }

    pub fn vocab(&self, g: Granularity) -> Option<&Vocabulary> {
        self.tokenizer(g).map(|t| t.vocab())
    }

    /// Preset architecture with one branch per available codec.
    pub fn model_config(&self, preset: &str) -> Result<ModelConfig> {
        let mut cfg = ModelConfig::preset(preset)?;
        for g in self.granularities() {
            cfg = cfg.with_head(g, self.vocab(g).expect("present").len());
        }
        Ok(cfg)
    }

    /// Writes the subword sidecars into `dir`.
    pub fn save(&self, dir: &Path) -> Result<Sidecars> {
        let mut side = Sidecars::default();
        if let Some(bpe) = &self.bpe {
            bpe.vocab().save(&dir.join(BPE_VOCAB_FILE))?;
            bpe.merges().save(&dir.join(BPE_MERGES_FILE))?;
            side.bpe_vocab = Some(BPE_VOCAB_FILE.into());
            side.bpe_merges = Some(BPE_MERGES_FILE.into());
        }
        if let Some(wp) = &self.wp {
            wp.vocab().save(&dir.join(WP_VOCAB_FILE))?;
            side.wp_vocab = Some(WP_VOCAB_FILE.into());
        }
        Ok(side)
    }

    pub fn load(dir: &Path, side: &Sidecars) -> Result<Self> {
        let mut c = Self::char_only();
        match (&side.bpe_vocab, &side.bpe_merges) {
            (Some(v), Some(m)) => {
                let vocab = Vocabulary::load(&dir.join(v))?;
                let merges = MergeTable::load(&dir.join(m))?;
                c.bpe = Some(BpeTokenizer::new(vocab, merges)?);
            }
            (None, None) => {}
            _ => return Err(Error::Config("BPE needs both vocab and merges sidecars".into())),
        }
        if let Some(v) = &side.wp_vocab {
            c.wp = Some(WordPieceTokenizer::new(Vocabulary::load(&dir.join(v))?)?);
        }
        Ok(c)
    }
}

/// Encoded targets for each requested head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labels {
    pub word: String,
    pub sequences: Vec<(Granularity, TokenSequence)>,
}

impl Labels {
    pub fn get(&self, g: Granularity) -> Option<&TokenSequence> {
        self.sequences.iter().find(|(lg, _)| *lg == g).map(|(_, s)| s)
    }
}

/// Char, BPE and WordPiece targets of `word`, each eos-terminated and padded
/// to `max_len`. Heads not in `heads` are omitted.
pub fn prepare_labels(
    word: &str,
    codecs: &Codecs,
    heads: &[Granularity],
    max_len: usize,
) -> Result<Labels> {
    let mut sequences = Vec::new();
    for &g in heads {
        let tok = codecs
            .tokenizer(g)
            .ok_or_else(|| Error::Config(format!("no {g} tokenizer")))?;
        sequences.push((g, tok.encode(word, max_len)?));
    }
    Ok(Labels {
        word: word.to_string(),
        sequences,
    })
}

#[derive(Debug, Clone)]
pub struct Recognizer {
    pub model: MgpStr<f32>,
    pub codecs: Codecs,
}

impl Recognizer {
    pub fn new(model: MgpStr<f32>, codecs: Codecs) -> Result<Self> {
        for h in &model.config().heads {
            let vocab = codecs
                .vocab(h.granularity)
                .ok_or_else(|| Error::Config(format!("model has a {} head but no codec", h.granularity)))?;
            if vocab.len() != h.num_classes {
                return Err(Error::Config(format!(
                    "{} head has {} classes, vocabulary has {}",
                    h.granularity,
                    h.num_classes,
                    vocab.len()
                )));
            }
        }
        Ok(Self { model, codecs })
    }

    /// Loads a checkpoint and its sidecars (resolved next to the file).
    pub fn load(path: &Path) -> Result<Self> {
        let (model, meta) = load_checkpoint(path)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let codecs = Codecs::load(dir, &meta.tokenizers)?;
        Self::new(model, codecs)
    }

    /// Writes the checkpoint and its sidecars into the same directory.
    pub fn save(&self, path: &Path) -> Result<()> {
        let dir = path.parent().unwrap_or(Path::new("."));
        let side = self.codecs.save(dir)?;
        save_checkpoint(&self.model, &side, path)
    }

    /// Decoded predictions of every branch in `output`.
    pub fn predictions(&self, output: &ModelOutput<f32>, mode: FusionMode) -> Result<Vec<Prediction>> {
        output
            .branches
            .iter()
            .map(|b| {
                let vocab = self.codecs.vocab(b.granularity).expect("checked in new");
                Prediction::from_logits(b.granularity, &b.logits, vocab, mode)
            })
            .collect()
    }

    pub fn recognize(&self, image: &Tensor<f32>, mode: FusionMode) -> Result<FusedResult> {
        let out = self.model.forward(image)?;
        fuse(&self.predictions(&out, mode)?, mode)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_for_table() {
        let corpus = ["table", "table", "tablet", "able"];
        let codecs = Codecs::train(&corpus, &Granularity::ALL, 50, 100).unwrap();
        let labels = prepare_labels("table", &codecs, &Granularity::ALL, 27).unwrap();
        assert_eq!(labels.get(Granularity::Char).unwrap().length, 6);
        for g in [Granularity::Bpe, Granularity::WordPiece] {
            assert!(labels.get(g).unwrap().length <= 6);
        }
        let only = prepare_labels("table", &codecs, &[Granularity::Char], 27).unwrap();
        assert!(only.get(Granularity::Bpe).is_none());
        let long = "abcdefghijklmnopqrstuvwxyz";
        let seq = prepare_labels(long, &codecs, &[Granularity::Char], 27).unwrap();
        let seq = seq.get(Granularity::Char).unwrap();
        assert_eq!((seq.length, seq.ids[26]), (27, 1));
    }

    #[test]
    fn sidecars_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let codecs = Codecs::train(&["low", "low", "lower"], &Granularity::ALL, 5, 80).unwrap();
        let side = codecs.save(dir.path()).unwrap();
        assert_eq!(Codecs::load(dir.path(), &side).unwrap(), codecs);
        let cfg = codecs.model_config("micro").unwrap();
        assert_eq!(cfg.heads.len(), 3);
    }
}
