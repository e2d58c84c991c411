//! Multi-task training: one cross-entropy loss per enabled head, summed with
//! per-head weights and optimized jointly with Adadelta.

pub mod checkpoint;
mod config;
mod optim;

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{Scores, Tally};
use crate::fusion::{FusionMode, Prediction};
use crate::granularity::Granularity;
use crate::model::MgpStr;
use crate::nn::{cross_entropy_prefix, Module, Tensor};
use crate::recognizer::{prepare_labels, Codecs, Labels, Recognizer};
use crate::synthdata::{corpus_of, Sample};

pub use self::config::{LossWeights, Schedule, TrainConfig, SEED_ENV};
pub use self::optim::{clip_grad_norm, grad_norm, scale_grads, Adadelta};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const LAST_CHECKPOINT: &str = "last.mgpc";
pub const OPTIMIZER_FILE: &str = "last.opt";
pub const NAN_DUMP_FILE: &str = "nan_dump.json";

/// Mean per-head losses of one batch, before weighting.
#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    pub losses: BTreeMap<Granularity, f64>,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    /// Pre-update predictions for each sample of the batch.
    pub predictions: Vec<Vec<Prediction>>,
}

/// Forward and backward over `batch`, then one Adadelta update.
///
/// The objective is `Σ_g w_g · CE_g` averaged over the batch, where `g`
/// ranges over the labelled heads of each sample.
pub fn train_step(
    model: &mut MgpStr<f32>,
    opt: &mut Adadelta,
    codecs: &Codecs,
    batch: &[(&Tensor<f32>, &Labels)],
    config: &TrainConfig,
    lr: f64,
) -> Result<StepStats> {
    if batch.is_empty() {
        return Err(Error::Protocol("empty batch".into()));
    }
    let inv_b = 1.0 / batch.len() as f64;
    let mut losses: BTreeMap<Granularity, f64> = BTreeMap::new();
    let mut predictions = Vec::with_capacity(batch.len());
    model.zero_grad();
    for (image, labels) in batch {
        let heads: Vec<Granularity> = labels.sequences.iter().map(|(g, _)| *g).collect();
        let (out, cache) = model.forward_heads(image, &heads)?;
        let mut grads = Vec::with_capacity(heads.len());
        let mut preds = Vec::with_capacity(heads.len());
        for b in &out.branches {
            let seq = labels.get(b.granularity).expect("forward ran labelled heads");
            let positions = if config.loss_mask_pad {
                seq.length
            } else {
                seq.ids.len()
            };
            let ce = cross_entropy_prefix(&b.logits, &seq.ids, positions)?;
            *losses.entry(b.granularity).or_insert(0.0) += ce.loss as f64 * inv_b;
            let w = config.loss_weights.get(b.granularity);
            if w != 0.0 {
                let mut d = ce.dlogits;
                let s = (w * inv_b) as f32;
                d.data_mut().iter_mut().for_each(|v| *v *= s);
                grads.push((b.granularity, d));
            }
            let vocab = codecs.vocab(b.granularity).expect("codec for every head");
            preds.push(Prediction::from_logits(b.granularity, &b.logits, vocab, FusionMode::Mean)?);
        }
        model.backward(&cache, &grads);
        predictions.push(preds);
    }
    let norm = grad_norm(model);
    if losses.values().any(|l| !l.is_finite()) || !norm.is_finite() {
        model.zero_grad();
        return Err(Error::NonFinite(format!(
            "losses {:?}, gradient norm {norm}",
            losses
                .iter()
                .map(|(g, l)| (g.as_str(), *l))
                .collect::<Vec<_>>()
        )));
    }
    if let Some(max) = config.clip_norm {
        clip_grad_norm(model, max);
    }
    opt.step(model, lr);
    model.zero_grad();
    Ok(StepStats {
        losses,
        grad_norm: norm,
        predictions,
    })
}

fn head_map<T: Copy>(m: &BTreeMap<Granularity, T>) -> BTreeMap<String, T> {
    m.iter().map(|(g, v)| (g.as_str().to_string(), *v)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainScores {
    pub loss: BTreeMap<String, f64>,
    #[serde(flatten)]
    pub scores: Scores,
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Record {
    Step {
        epoch: usize,
        step: usize,
        lr: f64,
        loss: BTreeMap<String, f64>,
        grad_norm: f64,
    },
    Epoch {
        epoch: usize,
        step: usize,
        lr: f64,
        train: TrainScores,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        eval: Option<Scores>,
        /// Seconds since the run started.
        wall_time: f64,
    },
}

#[derive(Serialize, Deserialize)]
struct OptimizerTrailer {
    step: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub steps: usize,
    pub records: Vec<Record>,
}

impl RunSummary {
    pub fn last_epoch(&self) -> Option<(&TrainScores, Option<&Scores>)> {
        self.records.iter().rev().find_map(|r| match r {
            Record::Epoch { train, eval, .. } => Some((train, eval.as_ref())),
            Record::Step { .. } => None,
        })
    }
}

#[derive(Debug)]
pub struct Trainer {
    config: TrainConfig,
    pub recognizer: Recognizer,
    opt: Adadelta,
    step: usize,
}

impl Trainer {
    /// Trains the subword codecs on the training labels and builds a model
    /// with one branch per enabled head.
    pub fn new(config: TrainConfig, train: &[Sample]) -> Result<Self> {
        config.validate()?;
        let corpus = corpus_of(train);
        if corpus.is_empty() {
            return Err(Error::Protocol("no samples".into()));
        }
        let codecs = Codecs::train(&corpus, &config.heads, config.bpe_merges, config.wp_vocab)?;
        let model = MgpStr::new(codecs.model_config(&config.preset)?, config.seed)?;
        Self::from_recognizer(config, Recognizer::new(model, codecs)?)
    }

    /// Trains an existing model; branches not in `config.heads` stay frozen.
    pub fn from_recognizer(config: TrainConfig, recognizer: Recognizer) -> Result<Self> {
        config.validate()?;
        for g in &config.heads {
            if recognizer.model.branch(*g).is_none() {
                return Err(Error::Config(format!("model has no {g} head")));
            }
        }
        let opt = Adadelta::new(config.rho, config.eps);
        Ok(Self {
            config,
            recognizer,
            opt,
            step: 0,
        })
    }

    /// Continues from `out_dir/last.mgpc` and its optimizer state.
    pub fn resume(config: TrainConfig, out_dir: &Path) -> Result<Self> {
        let recognizer = Recognizer::load(&out_dir.join(LAST_CHECKPOINT))?;
        let mut t = Self::from_recognizer(config, recognizer)?;
        let path = out_dir.join(OPTIMIZER_FILE);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let (tensors, trailer) = checkpoint::decode_tensors(&bytes)?;
        let trailer: OptimizerTrailer =
            serde_json::from_str(&trailer).map_err(|e| Error::json(&path, e))?;
        t.opt.load_state(tensors)?;
        t.step = trailer.step;
        Ok(t)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    fn save_state(&self, out: &Path, epoch: usize) -> Result<()> {
        self.recognizer.save(&out.join(format!("epoch_{epoch:03}.mgpc")))?;
        self.recognizer.save(&out.join(LAST_CHECKPOINT))?;
        let state = self.opt.state_tensors();
        let trailer = serde_json::to_string(&OptimizerTrailer { step: self.step }).expect("json");
        let bytes = checkpoint::encode_tensors(state.iter().map(|(n, t)| (n.as_str(), t)), &trailer)?;
        let path = out.join(OPTIMIZER_FILE);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    }

    fn dump_non_finite(&self, out: Option<&Path>, epoch: usize, detail: &str) {
        let Some(out) = out else { return };
        let mut bad = Vec::new();
        self.recognizer.model.visit_params("", &mut |name, t| {
            if !t.all_finite() {
                bad.push(name.to_string());
            }
        });
        let dump = serde_json::json!({
            "step": self.step,
            "epoch": epoch,
            "detail": detail,
            "non_finite_params": bad,
        });
        let path = out.join(NAN_DUMP_FILE);
        if let Err(e) = fs::write(&path, format!("{dump:#}\n")) {
            log::error!("could not write {}: {e}", path.display());
        }
    }

    /// Trains until `epochs` (or `max_steps`) is reached. With `out`, appends
    /// to `metrics.jsonl` and writes a checkpoint after every epoch.
    pub fn run(
        &mut self,
        train: &[Sample],
        eval: Option<&[Sample]>,
        out: Option<&Path>,
    ) -> Result<RunSummary> {
        let cfg = self.config.clone();
        let max_len = self.recognizer.model.config().max_len;
        let mut examples: Vec<(&Tensor<f32>, Labels)> = Vec::with_capacity(train.len());
        for s in train {
            match prepare_labels(&s.label, &self.recognizer.codecs, &cfg.heads, max_len) {
                Ok(l) => examples.push((&s.image, l)),
                Err(e) => log::warn!("skipping training sample {:?}: {e}", s.label),
            }
        }
        if examples.is_empty() {
            return Err(Error::Protocol("no samples".into()));
        }
        let steps_per_epoch = examples.len().div_ceil(cfg.batch_size);
        let total_steps = steps_per_epoch * cfg.epochs;
        let stop = cfg.max_steps.map_or(total_steps, |m| m.min(total_steps));

        let mut metrics = match out {
            Some(dir) => {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let path = dir.join(METRICS_FILE);
                let file = if self.step == 0 {
                    File::create(&path)
                } else {
                    OpenOptions::new().create(true).append(true).open(&path)
                };
                Some((file.map_err(|e| Error::io(&path, e))?, path))
            }
            None => None,
        };
        let mut emit = |r: &Record| -> Result<()> {
            if let Some((f, path)) = metrics.as_mut() {
                let line = serde_json::to_string(r).expect("record serializes");
                writeln!(f, "{line}").map_err(|e| Error::io(&*path, e))?;
            }
            Ok(())
        };

        let started = Instant::now();
        let mut records = Vec::new();
        let modes = FusionMode::ALL;
        while self.step < stop {
            let epoch = self.step / steps_per_epoch;
            let skip = self.step % steps_per_epoch;
            let mut order: Vec<usize> = (0..examples.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(epoch as u64 + 1);
            order.shuffle(&mut rng);

            let mut tally = Tally::default();
            let mut loss_sum: BTreeMap<Granularity, f64> = BTreeMap::new();
            let mut batches = 0usize;
            let mut lr = 0.0;
            for chunk in order.chunks(cfg.batch_size).skip(skip) {
                if self.step >= stop {
                    break;
                }
                lr = cfg.lr_at(self.step, total_steps);
                let batch: Vec<(&Tensor<f32>, &Labels)> =
                    chunk.iter().map(|&i| (examples[i].0, &examples[i].1)).collect();
                let stats = match train_step(
                    &mut self.recognizer.model,
                    &mut self.opt,
                    &self.recognizer.codecs,
                    &batch,
                    &cfg,
                    lr,
                ) {
                    Ok(s) => s,
                    Err(Error::NonFinite(detail)) => {
                        let detail = format!("step {} (epoch {}): {detail}", self.step, epoch + 1);
                        self.dump_non_finite(out, epoch + 1, &detail);
                        return Err(Error::NonFinite(detail));
                    }
                    Err(e) => return Err(e),
                };
                self.step += 1;
                batches += 1;
                for (g, l) in &stats.losses {
                    *loss_sum.entry(*g).or_insert(0.0) += l;
                }
                for (preds, &i) in stats.predictions.iter().zip(chunk) {
                    tally.add(preds, &examples[i].1.word, &modes)?;
                }
                if cfg.log_every.is_some_and(|k| self.step % k == 0) {
                    let r = Record::Step {
                        epoch: epoch + 1,
                        step: self.step,
                        lr,
                        loss: head_map(&stats.losses),
                        grad_norm: stats.grad_norm,
                    };
                    emit(&r)?;
                    records.push(r);
                }
            }
            let mean_loss = loss_sum
                .iter()
                .map(|(g, l)| (g.as_str().to_string(), l / batches.max(1) as f64))
                .collect();
            let eval_scores = match eval {
                Some(samples) if !samples.is_empty() => Some(self.score(samples)?),
                _ => None,
            };
            let r = Record::Epoch {
                epoch: epoch + 1,
                step: self.step,
                lr,
                train: TrainScores {
                    loss: mean_loss,
                    scores: tally.scores(),
                },
                eval: eval_scores,
                wall_time: started.elapsed().as_secs_f64(),
            };
            log::info!("{}", serde_json::to_string(&r).expect("record serializes"));
            emit(&r)?;
            records.push(r);
            if let Some(dir) = out {
                self.save_state(dir, epoch + 1)?;
            }
        }
        Ok(RunSummary {
            steps: self.step,
            records,
        })
    }

    /// Scores the enabled heads on `samples`.
    pub fn score(&self, samples: &[Sample]) -> Result<Scores> {
        let rec = &self.recognizer;
        let max_len = rec.model.config().max_len;
        let mut tally = Tally::default();
        for s in samples {
            if s.label.chars().count() + 1 > max_len {
                log::warn!("skipping evaluation sample {:?}: longer than T", s.label);
                continue;
            }
            let (out, _) = rec.model.forward_heads(&s.image, &self.config.heads)?;
            let preds = rec.predictions(&out, FusionMode::Mean)?;
            tally.add(&preds, &s.label, &FusionMode::ALL)?;
        }
        Ok(tally.scores())
    }
}
