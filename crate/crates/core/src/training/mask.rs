use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::text::{ConceptSpan, EncodedConcepts, TokenId, BOS, EOS, MASK};

/// Number of concepts in every pre-training set.
pub const PRETRAIN_CONCEPTS: usize = 5;

/// A concept-masked encoder input and its reconstruction target.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedConcepts {
    pub input: EncodedConcepts,
    /// `BOS` + the unmasked concept tokens + `EOS`.
    pub target: Vec<TokenId>,
    /// Masked concept indices, ascending.
    pub masked: Vec<usize>,
}

/// Draws a mask count uniformly from `0..=5`, masks that many distinct
/// concepts and returns the masked input with the original as target.
pub fn mask_concepts(enc: &EncodedConcepts, rng: &mut impl Rng) -> Result<MaskedConcepts> {
    if enc.spans.len() != PRETRAIN_CONCEPTS {
        return Err(Error::Data(format!(
            "pre-training needs exactly {PRETRAIN_CONCEPTS} concepts, got {}",
            enc.spans.len()
        )));
    }
    let count = rng.random_range(0..=PRETRAIN_CONCEPTS);
    let mut chosen = index::sample(rng, PRETRAIN_CONCEPTS, count).into_vec();
    chosen.sort_unstable();
    mask_spans(enc, &chosen)
}

/// Replaces the whole span of each concept in `chosen` with one `MASK`.
pub fn mask_spans(enc: &EncodedConcepts, chosen: &[usize]) -> Result<MaskedConcepts> {
    if let Some(&bad) = chosen.iter().find(|&&c| c >= enc.spans.len()) {
        return Err(Error::Data(format!(
            "cannot mask concept {bad} of {}",
            enc.spans.len()
        )));
    }
    let mut ids = Vec::with_capacity(enc.ids.len());
    let mut spans = Vec::with_capacity(enc.spans.len());
    for sp in &enc.spans {
        let start = ids.len();
        if chosen.contains(&sp.concept) {
            ids.push(MASK);
        } else {
            ids.extend_from_slice(&enc.ids[sp.start..sp.end]);
        }
        spans.push(ConceptSpan {
            concept: sp.concept,
            start,
            end: ids.len(),
        });
    }
    let mut target = Vec::with_capacity(enc.ids.len() + 2);
    target.push(BOS);
    target.extend_from_slice(&enc.ids);
    target.push(EOS);
    let mut masked = chosen.to_vec();
    masked.sort_unstable();
    masked.dedup();
    Ok(MaskedConcepts {
        input: EncodedConcepts { ids, spans },
        target,
        masked,
    })
}
