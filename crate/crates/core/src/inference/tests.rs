use proptest::prelude::*;

use super::*;
use crate::model::ModelConfig;
use crate::numerics::ParamStore;
use crate::testutil::{tiny_config, toy_example};

const A: TokenId = 5;
const B: TokenId = 6;
const VOCAB: usize = 7;

/// Three-token model whose distribution depends on the last token and the
/// prefix length.
struct Table;

fn dist(pairs: &[(TokenId, f64)]) -> Vec<f64> {
    let mut out = vec![f64::NEG_INFINITY; VOCAB];
    for &(t, p) in pairs {
        out[t] = p.ln();
    }
    out
}

impl StepScorer for Table {
    fn log_probs(&self, prefix: &[TokenId]) -> Result<Vec<f64>> {
        let third = 1.0 / 3.0;
        Ok(match (prefix.len(), *prefix.last().unwrap()) {
            (1, _) => dist(&[(A, 0.55), (B, 0.45)]),
            (2, t) if t == A => dist(&[(A, 0.4), (B, 0.3), (EOS, 0.3)]),
            (2, _) => dist(&[(A, 0.05), (B, 0.05), (EOS, 0.9)]),
            (n, _) if n >= 4 => dist(&[(EOS, 1.0)]),
            _ => dist(&[(A, third), (B, third), (EOS, third)]),
        })
    }
}

/// Every finished sequence up to `max_len` tokens, scored exhaustively.
fn exhaustive(scorer: &impl StepScorer, max_len: usize, alpha: f64) -> Hypothesis {
    let mut best: Option<Hypothesis> = None;
    let mut stack = vec![(vec![BOS], 0.0)];
    while let Some((tokens, lp)) = stack.pop() {
        if tokens.len() >= max_len {
            continue;
        }
        let next = scorer.log_probs(&tokens).unwrap();
        for (t, &p) in next.iter().enumerate() {
            if p == f64::NEG_INFINITY {
                continue;
            }
            let mut ext = tokens.clone();
            ext.push(t);
            if t == EOS {
                let h = Hypothesis {
                    tokens: ext,
                    log_prob: lp + p,
                    finished: true,
                };
                let better = best.as_ref().is_none_or(|b| {
                    hypothesis_score(&h, alpha) > hypothesis_score(b, alpha)
                });
                if better {
                    best = Some(h);
                }
            } else {
                stack.push((ext, lp + p));
            }
        }
    }
    best.unwrap()
}

fn beam(size: usize, alpha: f64, max_len: usize) -> BeamConfig {
    BeamConfig {
        beam_size: size,
        length_penalty: alpha,
        max_len,
    }
}

#[test]
fn beam_of_two_matches_exhaustive_search() {
    for alpha in [0.0, 0.6, 1.0] {
        let want = exhaustive(&Table, 5, alpha);
        let got = beam_search(&Table, &beam(2, alpha, 5)).unwrap();
        assert_eq!(got.tokens, want.tokens);
        assert!((got.log_prob - want.log_prob).abs() < 1e-12);
    }
    assert_eq!(beam_search(&Table, &beam(2, 0.6, 5)).unwrap().tokens, vec![BOS, B, EOS]);
}

#[test]
fn beam_of_one_is_greedy() {
    let got = beam_search(&Table, &beam(1, 0.6, 5)).unwrap();
    assert_eq!(got.tokens, vec![BOS, A, A, EOS]);
    let wide = beam_search(&Table, &beam(5, 0.6, 5)).unwrap();
    assert!(hypothesis_score(&wide, 0.6) >= hypothesis_score(&got, 0.6));
}

#[test]
fn zero_penalty_scores_raw_log_probability() {
    let h = Hypothesis {
        tokens: vec![BOS, A, B, EOS],
        log_prob: -2.5,
        finished: true,
    };
    assert_eq!(hypothesis_score(&h, 0.0), -2.5);
    assert_eq!(length_penalty(1, 0.6), 1.0);
    assert!((length_penalty(3, 0.6) - (8.0f64 / 6.0).powf(0.6)).abs() < 1e-15);
}

#[test]
fn unfinished_best_is_returned_at_the_length_limit() {
    let got = beam_search(&Table, &beam(2, 0.6, 2)).unwrap();
    assert_eq!(got.tokens, vec![BOS, A]);
    assert!(!got.finished);
}

#[test]
fn short_limits_and_empty_beams_are_config_errors() {
    assert!(matches!(beam_search(&Table, &beam(2, 0.6, 1)), Err(Error::Config(_))));
    assert!(matches!(beam_search(&Table, &beam(0, 0.6, 5)), Err(Error::Config(_))));
}

/// Random tables keyed on the prefix.
struct Hashed(u64);

impl StepScorer for Hashed {
    fn log_probs(&self, prefix: &[TokenId]) -> Result<Vec<f64>> {
        let mut h = self.0;
        for &t in prefix {
            h = h.wrapping_mul(6364136223846793005).wrapping_add(t as u64 + 1442695040888963407);
        }
        let w: Vec<f64> = (0..3)
            .map(|i| ((h >> (i * 16)) & 0xffff) as f64 + 1.0)
            .collect();
        let z: f64 = w.iter().sum();
        Ok(dist(&[(EOS, w[0] / z), (A, w[1] / z), (B, w[2] / z)]))
    }
}

proptest! {
    #[test]
    fn greedy_follows_the_argmax(seed in any::<u64>()) {
        let scorer = Hashed(seed);
        let got = beam_search(&scorer, &beam(1, 0.6, 6)).unwrap();
        let mut tokens = vec![BOS];
        let mut total = 0.0;
        while tokens.len() < 6 {
            let lp = scorer.log_probs(&tokens).unwrap();
            let (t, p) = lp
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                .unwrap();
            tokens.push(t);
            total += p;
            if t == EOS {
                break;
            }
        }
        prop_assert_eq!(&got.tokens, &tokens);
        prop_assert!((got.log_prob - total).abs() < 1e-12);
    }

    #[test]
    fn log_probability_is_the_sum_of_steps(seed in any::<u64>(), size in 1usize..4) {
        let scorer = Hashed(seed);
        let got = beam_search(&scorer, &beam(size, 0.6, 6)).unwrap();
        let mut total = 0.0;
        for i in 1..got.tokens.len() {
            let lp = scorer.log_probs(&got.tokens[..i]).unwrap();
            total += lp[got.tokens[i]];
            prop_assert!(total <= 0.0);
        }
        prop_assert!((got.log_prob - total).abs() < 1e-12);
        prop_assert!(got.tokens.len() <= 6);
    }
}

#[test]
fn model_generation_is_deterministic_and_bounded() {
    let mut store = ParamStore::new();
    let model = Model::new(
        ModelConfig {
            max_dec_len: 12,
            ..tiny_config(1)
        },
        &mut store,
        3,
    )
    .unwrap();
    let ex = toy_example(&[2, 1, 1], &[1, 0, 2], 40);
    let run = || {
        generate_ids(&model, &store, &ex.enc_ids, &ex.spans, &ex.graphs, &BeamConfig::default())
            .unwrap()
    };
    let a = run();
    assert_eq!(a, run());
    assert!(a.len() <= 12);
    assert_eq!(a[0], BOS);
}
