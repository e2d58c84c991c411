//! Sequence scores from per-token confidences and highest-score selection.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::granularity::Granularity;
use crate::nn::{Scalar, Tensor};
use crate::tokenizers::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    Mean,
    Cumprod,
}

impl FusionMode {
    pub const ALL: [FusionMode; 2] = [FusionMode::Mean, FusionMode::Cumprod];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::Mean => "mean",
            FusionMode::Cumprod => "cumprod",
        }
    }

    pub fn score(self, confidences: &[f64]) -> Result<f64> {
        match self {
            FusionMode::Mean => score_mean(confidences),
            FusionMode::Cumprod => score_cumprod(confidences),
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(FusionMode::Mean),
            "cumprod" => Ok(FusionMode::Cumprod),
            _ => Err(Error::Config(format!("unknown fusion mode {s:?}"))),
        }
    }
}

/// Argmax decode of one head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadDecode {
    pub ids: Vec<usize>,
    pub text: String,
    /// Max softmax probability at each position up to and including eos.
    pub confidences: Vec<f64>,
    /// No eos among the T positions; every position counts as valid.
    pub no_eos: bool,
}

/// Per-position softmax and argmax, truncated at the first eos.
pub fn decode_head<F: Scalar>(logits: &Tensor<F>, vocab: &Vocabulary) -> Result<HeadDecode> {
    let (t, k) = logits.dims2();
    if k != vocab.len() {
        return Err(Error::dim(
            "decode_head",
            format!("{k} logit classes for a vocabulary of {}", vocab.len()),
        ));
    }
    let mut ids = Vec::with_capacity(t);
    let mut confidences = Vec::with_capacity(t);
    let mut no_eos = true;
    for i in 0..t {
        let row = logits.row(i);
        let (best, max) = row
            .iter()
            .map(|v| v.to_f64())
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (j, v)| if v > acc.1 { (j, v) } else { acc });
        let denom: f64 = row.iter().map(|v| (v.to_f64() - max).exp()).sum();
        ids.push(best);
        confidences.push(1.0 / denom);
        if best == vocab.eos_id() {
            no_eos = false;
            break;
        }
    }
    let text = vocab.decode(&ids);
    Ok(HeadDecode {
        ids,
        text,
        confidences,
        no_eos,
    })
}

/// Arithmetic mean of the confidences.
pub fn score_mean(confidences: &[f64]) -> Result<f64> {
    if confidences.is_empty() {
        return Err(Error::Protocol("mean score of an empty confidence list".into()));
    }
    Ok(confidences.iter().sum::<f64>() / confidences.len() as f64)
}

/// Product of the confidences.
pub fn score_cumprod(confidences: &[f64]) -> Result<f64> {
    if confidences.is_empty() {
        return Err(Error::Protocol("cumprod score of an empty confidence list".into()));
    }
    Ok(confidences.iter().product())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub granularity: Granularity,
    pub text: String,
    pub token_confidences: Vec<f64>,
    pub score: f64,
    #[serde(default)]
    pub no_eos: bool,
}

impl Prediction {
    pub fn from_logits<F: Scalar>(
        granularity: Granularity,
        logits: &Tensor<F>,
        vocab: &Vocabulary,
        mode: FusionMode,
    ) -> Result<Self> {
        let d = decode_head(logits, vocab)?;
        Ok(Self {
            granularity,
            score: mode.score(&d.confidences)?,
            text: d.text,
            token_confidences: d.confidences,
            no_eos: d.no_eos,
        })
    }

    /// A prediction whose score is supplied directly.
    pub fn scored(granularity: Granularity, text: impl Into<String>, score: f64) -> Self {
        Self {
            granularity,
            text: text.into(),
            token_confidences: Vec::new(),
            score,
            no_eos: false,
        }
    }

    /// Rescored under another fusion mode.
    pub fn rescored(&self, mode: FusionMode) -> Result<Self> {
        Ok(Self {
            score: mode.score(&self.token_confidences)?,
            ..self.clone()
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedResult {
    pub winner: Prediction,
    pub all: Vec<Prediction>,
    pub mode: FusionMode,
}

/// Picks the highest score; equal scores go to the finer granularity
/// (char, then BPE, then WordPiece).
pub fn fuse(preds: &[Prediction], mode: FusionMode) -> Result<FusedResult> {
    let winner = preds
        .iter()
        .reduce(|best, p| {
            let better = p.score > best.score
                || (p.score == best.score && p.granularity < best.granularity);
            if better {
                p
            } else {
                best
            }
        })
        .ok_or_else(|| Error::Protocol("fuse called with no predictions".into()))?;
    Ok(FusedResult {
        winner: winner.clone(),
        all: preds.to_vec(),
        mode,
    })
}

/// True iff some head read the ground truth exactly.
pub fn oracle_upper_bound(preds: &[Prediction], ground_truth: &str) -> bool {
    preds.iter().any(|p| p.text == ground_truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizers::{CharTokenizer, Tokenizer};
    use Granularity::{Bpe, Char, WordPiece};

    fn one_hot(ids: &[usize], k: usize, hot: f64) -> Tensor<f64> {
        let mut data = vec![0.0; ids.len() * k];
        for (i, &id) in ids.iter().enumerate() {
            data[i * k + id] = hot;
        }
        Tensor::from_vec(&[ids.len(), k], data).unwrap()
    }

    #[test]
    fn decode_stops_at_eos() {
        let tok = CharTokenizer::new();
        let v = tok.vocab();
        let d = decode_head(&one_hot(&[12, 1, 0, 0], 38, 50.0), v).unwrap();
        assert_eq!(d.text, "a");
        assert_eq!(d.confidences.len(), 2);
        assert!(d.confidences.iter().all(|c| (c - 1.0).abs() < 1e-12));
        assert!(!d.no_eos);

        let d = decode_head(&one_hot(&[1, 12, 12], 38, 50.0), v).unwrap();
        assert_eq!(d.text, "");
        assert_eq!(d.confidences.len(), 1);

        let d = decode_head(&one_hot(&[12, 13, 14], 38, 50.0), v).unwrap();
        assert!(d.no_eos);
        assert_eq!((d.text.as_str(), d.confidences.len()), ("abc", 3));

        assert!(decode_head(&one_hot(&[1], 37, 1.0), v).is_err());
    }

    #[test]
    fn uniform_logits_give_inverse_k_confidence() {
        let tok = CharTokenizer::new();
        let zeros = Tensor::<f64>::zeros(&[4, 38]);
        let d = decode_head(&zeros, tok.vocab()).unwrap();
        // Ties resolve to the first class, which is pad.
        assert_eq!(d.ids, vec![0, 0, 0, 0]);
        assert!(d.no_eos);
        assert!(d.confidences.iter().all(|c| (c - 1.0 / 38.0).abs() < 1e-12));
    }

    #[test]
    fn scores() {
        assert_eq!(score_mean(&[1.0, 1.0, 1.0]).unwrap(), 1.0);
        assert!((score_mean(&[0.5, 0.7]).unwrap() - 0.6).abs() < 1e-12);
        assert!((score_cumprod(&[0.9, 0.8, 0.99]).unwrap() - 0.7128).abs() < 1e-9);
        assert!(matches!(score_mean(&[]), Err(Error::Protocol(_))));
        assert!(matches!(score_cumprod(&[]), Err(Error::Protocol(_))));
    }

    #[test]
    fn fuse_picks_highest_then_finest() {
        let preds = [
            Prediction::scored(Char, "tabbe", 0.1643),
            Prediction::scored(Bpe, "table", 0.9813),
            Prediction::scored(WordPiece, "table", 0.9521),
        ];
        let r = fuse(&preds, FusionMode::Cumprod).unwrap();
        assert_eq!((r.winner.granularity, r.winner.text.as_str()), (Bpe, "table"));

        let same = [
            Prediction::scored(WordPiece, "x", 0.5),
            Prediction::scored(Bpe, "x", 0.5),
            Prediction::scored(Char, "x", 0.5),
        ];
        assert_eq!(fuse(&same, FusionMode::Mean).unwrap().winner.granularity, Char);
        assert!(matches!(fuse(&[], FusionMode::Mean), Err(Error::Protocol(_))));
    }

    #[test]
    fn upper_bound() {
        let preds = [
            Prediction::scored(Char, "tabbe", 0.9),
            Prediction::scored(Bpe, "table", 0.1),
        ];
        assert!(oracle_upper_bound(&preds, "table"));
        assert!(!oracle_upper_bound(&preds, "tables"));
    }
}
