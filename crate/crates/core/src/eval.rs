//! Word accuracy per head, per fusion mode and for the any-head upper bound.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{fuse, oracle_upper_bound, FusionMode, Prediction};
use crate::granularity::Granularity;
use crate::recognizer::Recognizer;
use crate::synthdata::Sample;

/// Running correct-counts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Tally {
    pub samples: usize,
    heads: BTreeMap<Granularity, usize>,
    fused: BTreeMap<&'static str, usize>,
    upper: usize,
}

impl Tally {
    /// Records one sample. `preds` carry token confidences, so each fusion
    /// mode rescores them.
    pub fn add(&mut self, preds: &[Prediction], truth: &str, modes: &[FusionMode]) -> Result<()> {
        self.samples += 1;
        for p in preds {
            *self.heads.entry(p.granularity).or_insert(0) += (p.text == truth) as usize;
        }
        for &mode in modes {
            let rescored = preds
                .iter()
                .map(|p| p.rescored(mode))
                .collect::<Result<Vec<_>>>()?;
            let won = fuse(&rescored, mode)?.winner.text == truth;
            *self.fused.entry(mode.as_str()).or_insert(0) += won as usize;
        }
        self.upper += oracle_upper_bound(preds, truth) as usize;
        Ok(())
    }

    pub fn scores(&self) -> Scores {
        let n = self.samples.max(1) as f64;
        Scores {
            samples: self.samples,
            accuracy: self
                .heads
                .iter()
                .map(|(g, c)| (g.as_str().to_string(), *c as f64 / n))
                .collect(),
            fused: self
                .fused
                .iter()
                .map(|(m, c)| (m.to_string(), *c as f64 / n))
                .collect(),
            upper_bound: self.upper as f64 / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub samples: usize,
    /// Word accuracy keyed by head (`char`, `bpe`, `wp`).
    pub accuracy: BTreeMap<String, f64>,
    /// Word accuracy of the fused prediction keyed by mode.
    pub fused: BTreeMap<String, f64>,
    pub upper_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub scores: Scores,
    pub ms_per_image: f64,
}

/// Runs every branch of `rec` over `samples`.
pub fn evaluate(rec: &Recognizer, samples: &[Sample], modes: &[FusionMode]) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Protocol("no samples".into()));
    }
    let mut tally = Tally::default();
    let start = Instant::now();
    for s in samples {
        let out = rec.model.forward(&s.image)?;
        let preds = rec.predictions(&out, FusionMode::Mean)?;
        tally.add(&preds, &s.label, modes)?;
    }
    let ms_per_image = start.elapsed().as_secs_f64() * 1e3 / samples.len() as f64;
    Ok(EvalReport {
        scores: tally.scores(),
        ms_per_image,
    })
}
