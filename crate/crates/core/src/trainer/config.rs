use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::granularity::Granularity;

pub const SEED_ENV: &str = "MGP_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    /// Cosine annealing from `lr` to 0 over all steps.
    Cosine,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub char: f64,
    pub bpe: f64,
    pub wp: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            char: 1.0,
            bpe: 1.0,
            wp: 1.0,
        }
    }
}

impl LossWeights {
    pub fn get(&self, g: Granularity) -> f64 {
        match g {
            Granularity::Char => self.char,
            Granularity::Bpe => self.bpe,
            Granularity::WordPiece => self.wp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub preset: String,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many optimizer steps, if set. The schedule still
    /// spans `epochs`.
    pub max_steps: Option<usize>,
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
    pub schedule: Schedule,
    pub loss_weights: LossWeights,
    /// Average each head's loss over label tokens plus eos instead of all T
    /// positions.
    pub loss_mask_pad: bool,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub seed: u64,
    pub heads: Vec<Granularity>,
    pub bpe_merges: usize,
    pub wp_vocab: usize,
    /// Also write a metrics line every this many steps.
    pub log_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            preset: "micro".into(),
            batch_size: 32,
            epochs: 10,
            max_steps: None,
            lr: 1.0,
            rho: 0.95,
            eps: 1e-6,
            schedule: Schedule::Cosine,
            loss_weights: LossWeights::default(),
            loss_mask_pad: false,
            clip_norm: Some(10.0),
            seed: 0,
            heads: Granularity::ALL.to_vec(),
            bpe_merges: crate::tokenizers::DEFAULT_NUM_MERGES,
            wp_vocab: crate::tokenizers::DEFAULT_VOCAB_SIZE,
            log_every: None,
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::json(path, e))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Replaces the seed with `MGP_SEED` when that variable is set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not a u64")))?;
        }
        Ok(())
    }

    pub fn enabled(&self, g: Granularity) -> bool {
        self.heads.contains(&g)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !self.enabled(Granularity::Char) {
            return bad("the char head must be enabled".into());
        }
        for (i, g) in self.heads.iter().enumerate() {
            if self.heads[..i].contains(g) {
                return bad(format!("head {g} listed twice"));
            }
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive".into());
        }
        let w = self.loss_weights;
        if [w.char, w.bpe, w.wp].iter().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("loss weights must be finite and >= 0".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr {} must be finite and >= 0", self.lr));
        }
        if !(0.0..1.0).contains(&self.rho) || !(self.eps > 0.0) {
            return bad("rho must lie in [0, 1) and eps must be positive".into());
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return bad("clip_norm must be positive".into());
        }
        if self.log_every == Some(0) {
            return bad("log_every must be positive".into());
        }
        Ok(())
    }

    /// Learning rate for 0-based `step` of `total` steps.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.lr,
            Schedule::Cosine => {
                let t = step as f64 / total.max(1) as f64;
                0.5 * self.lr * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}
