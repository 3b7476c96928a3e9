use super::vocab::TokenId;
use super::Tokenizer;
use crate::error::{Error, Result};

/// Subword range `[start, end)` of concept `concept` (0-based, dataset
/// order) inside the encoder token sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConceptSpan {
    pub concept: usize,
    pub start: usize,
    pub end: usize,
}

impl ConceptSpan {
    pub fn width(&self) -> usize {
        self.end - self.start
    }
}

/// Recovers one span per concept from `ids`, which must be the encoding of
/// the concepts joined by single spaces.
pub fn align_concepts<S: AsRef<str>>(
    concepts: &[S],
    ids: &[TokenId],
    tokenizer: &Tokenizer,
) -> Result<Vec<ConceptSpan>> {
    let mut spans = Vec::with_capacity(concepts.len());
    let mut pos = 0;
    for (i, c) in concepts.iter().enumerate() {
        let c = c.as_ref();
        if c.is_empty() || c.contains(' ') {
            return Err(Error::Alignment(format!(
                "concept {i} ({c:?}) must be a non-empty single word"
            )));
        }
        let piece = if i == 0 {
            tokenizer.encode(c)
        } else {
            tokenizer.encode(&format!(" {c}"))
        };
        let end = pos + piece.len();
        if end > ids.len() || ids[pos..end] != piece[..] {
            return Err(Error::Alignment(format!(
                "concept {c:?} does not match the encoder tokens at position {pos}"
            )));
        }
        spans.push(ConceptSpan {
            concept: i,
            start: pos,
            end,
        });
        pos = end;
    }
    if pos != ids.len() {
        return Err(Error::Alignment(format!(
            "{} encoder tokens left over after aligning {} concepts",
            ids.len() - pos,
            concepts.len()
        )));
    }
    Ok(spans)
}

/// Checks that spans are ordered, non-empty, contiguous and cover `0..n`.
pub fn spans_partition(spans: &[ConceptSpan], n: usize) -> bool {
    let mut pos = 0;
    for (i, s) in spans.iter().enumerate() {
        if s.concept != i || s.start != pos || s.end <= s.start {
            return false;
        }
        pos = s.end;
    }
    pos == n
}
