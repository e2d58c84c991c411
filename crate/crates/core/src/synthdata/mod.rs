//! Seeded synthetic word images drawn with a built-in bitmap font.

pub mod font;
mod words;

use std::collections::HashSet;

use rand::distr::weighted::WeightedIndex;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::tokenizers::validate_word;

pub use self::font::{GLYPH_HEIGHT, GLYPH_WIDTH};
pub use self::words::{NUMBERS, WORDS};

pub const IMAGE_HEIGHT: usize = 32;
pub const IMAGE_WIDTH: usize = 128;
pub const CHANNELS: usize = 3;
pub const MAX_WORD_LEN: usize = 26;
pub const MAX_SCALE: usize = 4;
pub const MIN_H_SCALE: f64 = 0.6;
pub const MAX_NOISE_SIGMA: f64 = 0.05;
pub const MAX_ROTATION_DEG: f64 = 5.0;

const MARGIN: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `[32, 128, 3]`, values in `[0, 1]`.
    pub image: Tensor<f32>,
    pub label: String,
    pub seed: u64,
}

/// Horizontal and vertical pixels per font unit for a word of `len` glyphs.
///
/// Sized for the widest possible spacing so jitter never overflows the
/// canvas. Integer scales are used when they fit; otherwise the glyphs are
/// drawn two pixels tall and squeezed horizontally.
pub fn glyph_scale(len: usize) -> Result<(f64, usize)> {
    if len == 0 || len > MAX_WORD_LEN {
        return Err(Error::Length(format!(
            "word of {len} characters, renderable lengths are 1..={MAX_WORD_LEN}"
        )));
    }
    let units = (len * GLYPH_WIDTH + (len - 1) * 2) as f64;
    let avail_w = (IMAGE_WIDTH - 2 * MARGIN) as f64;
    let avail_h = (IMAGE_HEIGHT - 2 * MARGIN) / GLYPH_HEIGHT;
    let s = ((avail_w / units).floor() as usize).min(avail_h).min(MAX_SCALE);
    if s >= 2 {
        return Ok((s as f64, s));
    }
    let sx = avail_w / units;
    if sx < MIN_H_SCALE {
        return Err(Error::Length(format!("{len} characters do not fit the canvas")));
    }
    Ok((sx, 2))
}

/// Draws `word` deterministically from `seed`.
pub fn render(word: &str, seed: u64, augment: bool) -> Result<Sample> {
    validate_word(word)?;
    let chars: Vec<char> = word.chars().collect();
    let (sx, sy) = glyph_scale(chars.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut starts = Vec::with_capacity(chars.len());
    let mut u = 0usize;
    for i in 0..chars.len() {
        if i > 0 {
            u += GLYPH_WIDTH + 1 + rng.random_range(0..=1usize);
        }
        starts.push(u);
    }
    let total_units = u + GLYPH_WIDTH;
    let text_w = (total_units as f64 * sx).ceil() as usize;
    let text_h = GLYPH_HEIGHT * sy;
    let ox = MARGIN + rng.random_range(0..=IMAGE_WIDTH - 2 * MARGIN - text_w);
    let oy = MARGIN + rng.random_range(0..=IMAGE_HEIGHT - 2 * MARGIN - text_h);

    let mut gray = vec![1.0f32; IMAGE_HEIGHT * IMAGE_WIDTH];
    for y in oy..oy + text_h {
        let row = (y - oy) / sy;
        for x in ox..ox + text_w {
            let ux = ((x - ox) as f64 / sx).floor() as usize;
            // Last glyph whose span starts at or before ux.
            let k = starts.partition_point(|&s| s <= ux);
            if k == 0 {
                continue;
            }
            let col = ux - starts[k - 1];
            if font::ink(chars[k - 1], row, col) {
                gray[y * IMAGE_WIDTH + x] = 0.0;
            }
        }
    }

    if augment {
        let angle = rng.random_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG).to_radians();
        gray = rotate(&gray, angle);
        let sigma = rng.random_range(0.0..=MAX_NOISE_SIGMA);
        let normal = Normal::new(0.0, sigma).expect("finite sigma");
        for v in &mut gray {
            *v = (*v as f64 + normal.sample(&mut rng)).clamp(0.0, 1.0) as f32;
        }
    }

    let data = gray
        .iter()
        .flat_map(|&v| [v; CHANNELS])
        .collect();
    let image = Tensor::from_vec(&[IMAGE_HEIGHT, IMAGE_WIDTH, CHANNELS], data)?;
    Ok(Sample {
        image,
        label: word.to_string(),
        seed,
    })
}

/// Nearest-neighbour rotation about the canvas centre; uncovered pixels are
/// background.
fn rotate(gray: &[f32], angle: f64) -> Vec<f32> {
    let (sin, cos) = angle.sin_cos();
    let cy = (IMAGE_HEIGHT as f64 - 1.0) / 2.0;
    let cx = (IMAGE_WIDTH as f64 - 1.0) / 2.0;
    let mut out = vec![1.0f32; gray.len()];
    for y in 0..IMAGE_HEIGHT {
        for x in 0..IMAGE_WIDTH {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let srcx = (cos * dx + sin * dy + cx).round();
            let srcy = (-sin * dx + cos * dy + cy).round();
            if srcx >= 0.0
                && srcy >= 0.0
                && (srcx as usize) < IMAGE_WIDTH
                && (srcy as usize) < IMAGE_HEIGHT
            {
                out[y * IMAGE_WIDTH + x] = gray[srcy as usize * IMAGE_WIDTH + srcx as usize];
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    words: Vec<String>,
    weights: Vec<f64>,
}

impl Default for Lexicon {
    /// The 200 built-in words plus 20 digit strings, uniformly weighted.
    fn default() -> Self {
        let words = WORDS.iter().chain(NUMBERS.iter()).map(|w| w.to_string());
        Self::uniform(words).expect("built-in lexicon is valid")
    }
}

impl Lexicon {
    pub fn new(words: Vec<String>, weights: Vec<f64>) -> Result<Self> {
        if words.is_empty() {
            return Err(Error::Corpus("empty lexicon".into()));
        }
        if words.len() != weights.len() {
            return Err(Error::Corpus(format!(
                "{} words but {} weights",
                words.len(),
                weights.len()
            )));
        }
        for w in &words {
            validate_word(w)?;
            glyph_scale(w.chars().count())?;
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || weights.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::Corpus("weights must be non-negative with a positive sum".into()));
        }
        Ok(Self { words, weights })
    }

    pub fn uniform(words: impl IntoIterator<Item = String>) -> Result<Self> {
        let words: Vec<String> = words.into_iter().collect();
        let weights = vec![1.0; words.len()];
        Self::new(words, weights)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Train and test renderings drawn from one seed.
///
/// When `n_train` is at least the lexicon size, every word is rendered once
/// before the remaining slots are filled by weighted draws. Per-sample seeds
/// are unique across both splits, so no `(word, seed)` pair is shared.
pub fn make_splits(
    lexicon: &Lexicon,
    n_train: usize,
    n_test: usize,
    seed: u64,
    augment: bool,
) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = WeightedIndex::new(lexicon.weights())
        .map_err(|e| Error::Corpus(format!("lexicon weights: {e}")))?;

    let mut train_words: Vec<&str> = Vec::with_capacity(n_train);
    if n_train >= lexicon.len() {
        train_words.extend(lexicon.words().iter().map(String::as_str));
    }
    while train_words.len() < n_train {
        train_words.push(&lexicon.words()[dist.sample(&mut rng)]);
    }
    train_words.shuffle(&mut rng);
    let test_words: Vec<&str> = (0..n_test)
        .map(|_| lexicon.words()[dist.sample(&mut rng)].as_str())
        .collect();

    let mut used = HashSet::new();
    let mut fresh_seed = |rng: &mut ChaCha8Rng| loop {
        let s: u64 = rng.random();
        if used.insert(s) {
            return s;
        }
    };
    let train_seeds: Vec<u64> = train_words.iter().map(|_| fresh_seed(&mut rng)).collect();
    let test_seeds: Vec<u64> = test_words.iter().map(|_| fresh_seed(&mut rng)).collect();

    let build = |words: &[&str], seeds: &[u64]| -> Result<Vec<Sample>> {
        words
            .iter()
            .zip(seeds)
            .map(|(w, s)| render(w, *s, augment))
            .collect()
    };
    Ok((build(&train_words, &train_seeds)?, build(&test_words, &test_seeds)?))
}

/// The training-label multiset, one entry per sample.
pub fn corpus_of(samples: &[Sample]) -> Vec<String> {
    samples.iter().map(|s| s.label.clone()).collect()
}
