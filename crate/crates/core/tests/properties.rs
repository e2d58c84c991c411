mod common;

use mgp_core::fusion::{fuse, oracle_upper_bound, score_cumprod, score_mean, FusionMode, Prediction};
use mgp_core::heads::A3Module;
use mgp_core::nn::{softmax, Tensor};
use mgp_core::tokenizers::{
    greedy_segment, wordpiece_train, BpeTokenizer, CharTokenizer, Tokenizer, WordPieceTokenizer,
};
use mgp_core::Granularity;
use proptest::prelude::*;

fn word() -> impl Strategy<Value = String> {
    "[a-z0-9]{1,12}"
}

fn corpus() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec("[a-e]{1,6}", 1..25)
}

fn conf_list() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-6f64..=1.0, 1..10)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn char_round_trip(w in word()) {
        let tok = CharTokenizer::new();
        let seq = tok.encode(&w, 27).unwrap();
        prop_assert_eq!(tok.decode(&seq.ids), w.clone());
        prop_assert_eq!(seq.length, w.len() + 1);
    }

    #[test]
    fn bpe_round_trip_and_compression(c in corpus(), w in "[a-e]{1,8}", merges in 0usize..20) {
        let tok = BpeTokenizer::train(&c, merges).unwrap();
        let seq = tok.encode(&w, 27).unwrap();
        prop_assert_eq!(tok.decode(&seq.ids), w.clone());
        prop_assert!(seq.length <= w.len() + 1);
        // Training words never fall back to [UNK].
        for cw in &c {
            let ids = tok.encode(cw, 27).unwrap();
            prop_assert!(ids.content().iter().all(|&i| Some(i) != tok.vocab().unk_id()));
        }
    }

    #[test]
    fn wordpiece_round_trip_and_coverage(c in corpus(), extra in 0usize..30) {
        let size = mgp_core::tokenizers::SEED_SIZE + extra;
        let vocab = wordpiece_train(&c, size).unwrap();
        prop_assert!(vocab.len() <= size);
        let tok = WordPieceTokenizer::new(vocab).unwrap();
        for w in &c {
            let seq = tok.encode(w, 27).unwrap();
            prop_assert_eq!(tok.decode(&seq.ids), w.clone());
            prop_assert!(seq.length <= w.len() + 1);
        }
    }

    #[test]
    fn wordpiece_growth_never_lengthens_segmentations(c in corpus(), extra in 0usize..20) {
        let base = mgp_core::tokenizers::SEED_SIZE;
        let small = wordpiece_train(&c, base + extra).unwrap();
        let large = wordpiece_train(&c, base + extra + 1).unwrap();
        for w in &c {
            let a = greedy_segment(w, |u| small.contains(u)).unwrap();
            let b = greedy_segment(w, |u| large.contains(u)).unwrap();
            prop_assert!(b.len() <= a.len(), "{w}: {a:?} -> {b:?}");
        }
    }

    #[test]
    fn cumprod_below_min_below_mean(x in conf_list()) {
        let p = score_cumprod(&x).unwrap();
        let m = score_mean(&x).unwrap();
        let min = x.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert!(p <= min + 1e-15);
        prop_assert!(min <= m + 1e-15);
        prop_assert!(m > 0.0 && m <= 1.0 && p > 0.0 && p <= 1.0);
    }

    #[test]
    fn mean_is_permutation_invariant(mut x in conf_list()) {
        let a = score_mean(&x).unwrap();
        x.reverse();
        prop_assert!((a - score_mean(&x).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn fusion_winner_is_max_and_monotone_invariant(
        s in prop::collection::vec(0.001f64..1.0, 3),
        texts in prop::collection::vec("[ab]{1,2}", 3),
        truth in "[ab]{1,2}",
    ) {
        let preds: Vec<Prediction> = Granularity::ALL
            .iter()
            .zip(s.iter().zip(&texts))
            .map(|(g, (s, t))| Prediction::scored(*g, t.clone(), *s))
            .collect();
        let r = fuse(&preds, FusionMode::Cumprod).unwrap();
        let max = s.iter().cloned().fold(f64::MIN, f64::max);
        prop_assert_eq!(r.winner.score, max);
        let squashed: Vec<Prediction> = preds
            .iter()
            .map(|p| Prediction { score: p.score.ln() * 3.0 + 1.0, ..p.clone() })
            .collect();
        let r2 = fuse(&squashed, FusionMode::Cumprod).unwrap();
        prop_assert_eq!(r2.winner.granularity, r.winner.granularity);
        if r.winner.text == truth {
            prop_assert!(oracle_upper_bound(&preds, &truth));
        }
        let single = fuse(&preds[1..2], FusionMode::Mean).unwrap();
        prop_assert_eq!(&single.winner, &preds[1]);
    }

    #[test]
    fn softmax_rows_are_stochastic(rows in 1usize..6, cols in 1usize..9, seed in 0u64..1000) {
        let mut r = common::rng(seed);
        let x = common::randn(&mut r, &[rows, cols]);
        let scaled = Tensor::from_vec(x.shape(), x.data().iter().map(|v| v * 30.0).collect()).unwrap();
        let y = softmax(&scaled, 1).unwrap();
        for i in 0..rows {
            let s: f64 = y.row(i).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(y.row(i).iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn a3_masks_are_row_stochastic(tokens in 1usize..20, slots in 1usize..8, seed in 0u64..1000) {
        let mut r = common::rng(seed);
        let z = common::randn(&mut r, &[tokens, 12]);
        let mut a3 = A3Module::<f64>::new(12, slots, seed, "a3");
        common::jitter(&mut a3, &mut r, 2.0);
        let (y, masks, _) = a3.forward(&z).unwrap();
        prop_assert_eq!(y.shape(), &[slots, 12]);
        for t in 0..slots {
            prop_assert!((masks.row(t).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
