//! Coverage and BLEU metrics and concept-attention export.

mod attention;
mod metrics;

use serde::{Deserialize, Serialize};

pub use attention::{concept_attention, read_attention_csv, write_attention_csv};
pub use metrics::{bleu, concept_coverage, coverage, word_tokens};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub bleu3: f64,
    pub bleu4: f64,
    pub coverage: f64,
    pub n_examples: usize,
}

/// BLEU-3, BLEU-4 and coverage for aligned generations, reference lists and
/// concept sets.
pub fn evaluate<G: AsRef<str>, R: AsRef<str>, S: AsRef<str>>(
    generations: &[G],
    references: &[Vec<R>],
    concepts: &[Vec<S>],
) -> Result<MetricsReport> {
    Ok(MetricsReport {
        bleu3: bleu(generations, references, 3)?,
        bleu4: bleu(generations, references, 4)?,
        coverage: coverage(generations, concepts)?,
        n_examples: generations.len(),
    })
}
