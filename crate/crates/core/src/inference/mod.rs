//! Beam-search decoding.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::kg::GroundedGraphs;
use crate::model::{EncoderCache, Model, Pass};
use crate::numerics::ParamStore;
use crate::text::{ConceptSpan, TokenId, BOS, EOS, MASK, PAD};

/// Next-token log-probabilities given a prefix that starts with `BOS`.
pub trait StepScorer {
    fn log_probs(&self, prefix: &[TokenId]) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamConfig {
    pub beam_size: usize,
    pub length_penalty: f64,
    /// Longest hypothesis, counting `BOS` and `EOS`.
    pub max_len: usize,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            beam_size: 5,
            length_penalty: 0.6,
            max_len: crate::text::MAX_DECODER_LEN,
        }
    }
}

impl BeamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::Config("beam size must be at least 1".into()));
        }
        if self.max_len < 2 {
            return Err(Error::Config(format!(
                "maximum generation length must be at least 2, got {}",
                self.max_len
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<TokenId>,
    pub log_prob: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Generated length `t`, i.e. tokens after `BOS`.
    pub fn generated(&self) -> usize {
        self.tokens.len() - 1
    }
}

/// `((5 + t) / 6)^α`.
pub fn length_penalty(t: usize, alpha: f64) -> f64 {
    ((5.0 + t as f64) / 6.0).powf(alpha)
}

/// Length-normalized score used to rank hypotheses.
pub fn hypothesis_score(h: &Hypothesis, alpha: f64) -> f64 {
    h.log_prob / length_penalty(h.generated(), alpha)
}

fn banned(t: TokenId) -> bool {
    t == PAD || t == BOS || t == MASK
}

fn by_score(alpha: f64) -> impl Fn(&Hypothesis, &Hypothesis) -> Ordering {
    move |a, b| {
        hypothesis_score(b, alpha)
            .total_cmp(&hypothesis_score(a, alpha))
            .then_with(|| a.tokens.cmp(&b.tokens))
    }
}

/// Beam search over `scorer`. Each step ranks every one-token extension of
/// the live beam by cumulative log-probability; extensions ending in `EOS`
/// among the top `beam_size` retire to the finished pool and the rest refill
/// the beam. Search stops once `beam_size` hypotheses have finished, the
/// beam empties, or `max_len` is reached. Returns the finished hypothesis
/// with the best length-normalized score, or the best unfinished one if
/// none finished.
pub fn beam_search(scorer: &impl StepScorer, config: &BeamConfig) -> Result<Hypothesis> {
    config.validate()?;
    let k = config.beam_size;
    let mut live = vec![Hypothesis {
        tokens: vec![BOS],
        log_prob: 0.0,
        finished: false,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    while !live.is_empty() && finished.len() < k && live[0].tokens.len() < config.max_len {
        let mut candidates = Vec::new();
        for h in &live {
            let lp = scorer.log_probs(&h.tokens)?;
            for (t, &p) in lp.iter().enumerate() {
                if banned(t) || p == f64::NEG_INFINITY {
                    continue;
                }
                if p.is_nan() {
                    return Err(Error::Numeric("NaN next-token log-probability".into()));
                }
                let mut tokens = h.tokens.clone();
                tokens.push(t);
                candidates.push(Hypothesis {
                    tokens,
                    log_prob: h.log_prob + p,
                    finished: t == EOS,
                });
            }
        }
        candidates.sort_by(|a, b| {
            b.log_prob
                .total_cmp(&a.log_prob)
                .then_with(|| a.tokens.cmp(&b.tokens))
        });
        live.clear();
        for (rank, c) in candidates.into_iter().enumerate() {
            if c.finished {
                if rank < k {
                    finished.push(c);
                }
            } else if live.len() < k {
                live.push(c);
            }
            if rank + 1 >= k && live.len() >= k {
                break;
            }
        }
    }
    let pool = if finished.is_empty() { live } else { finished };
    pool.into_iter()
        .min_by(by_score(config.length_penalty))
        .ok_or_else(|| Error::Numeric("beam search produced no hypothesis".into()))
}

/// Scores next tokens with a trained model over a fixed encoder cache.
pub struct ModelScorer<'a> {
    pub model: &'a Model,
    pub store: &'a ParamStore,
    pub cache: EncoderCache,
}

impl<'a> ModelScorer<'a> {
    pub fn new(
        model: &'a Model,
        store: &'a ParamStore,
        enc_ids: &[TokenId],
        spans: &[ConceptSpan],
        graphs: &GroundedGraphs,
    ) -> Result<Self> {
        let cache = model.prepare(store, &mut Pass::eval(), enc_ids, spans, graphs)?;
        Ok(ModelScorer {
            model,
            store,
            cache,
        })
    }
}

impl StepScorer for ModelScorer<'_> {
    fn log_probs(&self, prefix: &[TokenId]) -> Result<Vec<f64>> {
        self.model.next_log_probs(self.store, &self.cache, prefix)
    }
}

/// Decodes one concept set; the returned ids start with `BOS`.
pub fn generate_ids(
    model: &Model,
    store: &ParamStore,
    enc_ids: &[TokenId],
    spans: &[ConceptSpan],
    graphs: &GroundedGraphs,
    config: &BeamConfig,
) -> Result<Vec<TokenId>> {
    let config = BeamConfig {
        max_len: config.max_len.min(model.config().max_dec_len),
        ..config.clone()
    };
    let scorer = ModelScorer::new(model, store, enc_ids, spans, graphs)?;
    Ok(beam_search(&scorer, &config)?.tokens)
}

#[cfg(test)]
mod tests;
