use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::text::lemmatize;

/// Lowercased alphanumeric runs; punctuation and spaces separate tokens.
pub fn word_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

/// Fraction of `concepts` whose lemmas all appear among the lemmatized
/// tokens of `generation`.
pub fn concept_coverage<S: AsRef<str>>(generation: &str, concepts: &[S]) -> Result<f64> {
    if concepts.is_empty() {
        return Err(Error::Data("coverage needs at least one concept".into()));
    }
    let lemmas: Vec<String> = word_tokens(generation).iter().map(|w| lemmatize(w)).collect();
    let hit = concepts
        .iter()
        .filter(|c| {
            let parts = word_tokens(c.as_ref());
            !parts.is_empty() && parts.iter().all(|p| lemmas.contains(&lemmatize(p)))
        })
        .count();
    Ok(hit as f64 / concepts.len() as f64)
}

/// Mean per-example concept coverage, as a percentage.
pub fn coverage<G: AsRef<str>, S: AsRef<str>>(generations: &[G], concepts: &[Vec<S>]) -> Result<f64> {
    if generations.len() != concepts.len() {
        return Err(Error::Data(format!(
            "{} generations for {} concept sets",
            generations.len(),
            concepts.len()
        )));
    }
    if generations.is_empty() {
        return Err(Error::Data("no generations to score".into()));
    }
    let mut total = 0.0;
    for (g, c) in generations.iter().zip(concepts) {
        total += concept_coverage(g.as_ref(), c)?;
    }
    Ok(100.0 * total / generations.len() as f64)
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU up to order `max_n` on [`word_tokens`], as a percentage.
/// Orders two and above add one to both the clipped match count and the
/// candidate n-gram count. The brevity penalty uses, per candidate, the
/// reference length closest to the candidate length (shorter on ties).
pub fn bleu<C: AsRef<str>, R: AsRef<str>>(
    candidates: &[C],
    references: &[Vec<R>],
    max_n: usize,
) -> Result<f64> {
    if !(1..=4).contains(&max_n) {
        return Err(Error::Config(format!("BLEU order must be 1 to 4, got {max_n}")));
    }
    if candidates.len() != references.len() {
        return Err(Error::Data(format!(
            "{} candidates for {} reference lists",
            candidates.len(),
            references.len()
        )));
    }
    let mut matches = vec![0usize; max_n];
    let mut totals = vec![0usize; max_n];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);
    for (cand, refs) in candidates.iter().zip(references) {
        if refs.is_empty() {
            return Err(Error::Data("candidate has no references".into()));
        }
        let cand = word_tokens(cand.as_ref());
        let refs: Vec<Vec<String>> = refs.iter().map(|r| word_tokens(r.as_ref())).collect();
        cand_len += cand.len();
        ref_len += refs
            .iter()
            .map(Vec::len)
            .min_by_key(|&r| (r.abs_diff(cand.len()), r))
            .expect("references are non-empty");
        for n in 1..=max_n {
            let counts = ngram_counts(&cand, n);
            let ref_counts: Vec<_> = refs.iter().map(|r| ngram_counts(r, n)).collect();
            for (gram, &c) in &counts {
                let max_ref = ref_counts
                    .iter()
                    .map(|rc| rc.get(gram).copied().unwrap_or(0))
                    .max()
                    .unwrap_or(0);
                matches[n - 1] += c.min(max_ref);
            }
            totals[n - 1] += cand.len().saturating_sub(n - 1);
        }
    }
    if cand_len == 0 || matches[0] == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 0..max_n {
        let (m, t) = if n == 0 {
            (matches[0] as f64, totals[0] as f64)
        } else {
            (matches[n] as f64 + 1.0, totals[n] as f64 + 1.0)
        };
        log_sum += (m / t).ln();
    }
    let bp = if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    Ok(100.0 * bp * (log_sum / max_n as f64).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn coverage_hand_cases() {
        let dog_run = ["dog", "run"];
        assert_eq!(concept_coverage("a dog is running", &dog_run).unwrap(), 1.0);
        assert_eq!(concept_coverage("a cat sleeps", &dog_run).unwrap(), 0.0);
        assert_eq!(concept_coverage("The dog runs.", &dog_run).unwrap(), 1.0);
        assert_eq!(concept_coverage("dogs", &dog_run).unwrap(), 0.5);
        assert_eq!(
            coverage(&["dog run", "a cat"], &[vec!["dog", "run"], vec!["cat", "sit"]]).unwrap(),
            75.0
        );
        assert!(coverage(&["x"], &[vec!["a"], vec!["b"]]).is_err());
    }

    #[test]
    fn bleu_trivial_cases() {
        let refs = vec![vec!["the cat sat on the mat"]];
        assert!((bleu(&["the cat sat on the mat"], &refs, 4).unwrap() - 100.0).abs() < 1e-9);
        assert_eq!(bleu(&["dog ran away"], &refs, 4).unwrap(), 0.0);
        let no_refs: Vec<Vec<&str>> = vec![vec![]];
        assert!(matches!(bleu(&["a"], &no_refs, 4), Err(Error::Data(_))));
        assert!(matches!(bleu(&["a"], &refs, 5), Err(Error::Config(_))));
    }

    #[test]
    fn bleu_short_candidate_hand_case() {
        let got = bleu(&["the cat sat"], &[vec!["the cat sat down"]], 4).unwrap();
        let want = 100.0 * (1.0f64 - 4.0 / 3.0).exp();
        assert!((got - want).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn coverage_grows_when_a_concept_is_appended(
            words in proptest::collection::vec("[a-z]{1,6}", 1..6),
            concepts in proptest::collection::vec("[a-z]{2,6}", 1..4),
            pick in 0usize..4,
        ) {
            let text = words.join(" ");
            let before = concept_coverage(&text, &concepts).unwrap();
            let extra = format!("{text} {}", concepts[pick % concepts.len()]);
            let after = concept_coverage(&extra, &concepts).unwrap();
            prop_assert!(after >= before);
            prop_assert!((0.0..=1.0).contains(&after));
        }

        #[test]
        fn bleu_is_bounded_and_case_blind(
            cand in proptest::collection::vec("[a-cA-C]{1,2}", 1..8),
            reference in proptest::collection::vec("[a-c]{1,2}", 1..8),
        ) {
            let c = cand.join(" ");
            let r = vec![vec![reference.join(" ")]];
            let score = bleu(&[c.clone()], &r, 4).unwrap();
            prop_assert!((0.0..=100.0 + 1e-9).contains(&score));
            let lower = bleu(&[c.to_lowercase()], &r, 4).unwrap();
            prop_assert_eq!(score, lower);
        }
    }
}
