use std::collections::BTreeSet;

use super::graph::{EntityId, KnowledgeGraph, Triple};
use super::lexicon::{PosLexicon, PosTag, WordVectorTable};
use crate::error::{Error, Result};

/// Resolves every concept to a unigram entity.
pub fn match_concepts<S: AsRef<str>>(concepts: &[S], kg: &KnowledgeGraph) -> Result<Vec<EntityId>> {
    let found = match_concepts_partial(concepts, kg)?;
    let missing: Vec<&str> = concepts
        .iter()
        .zip(&found)
        .filter(|(_, id)| id.is_none())
        .map(|(c, _)| c.as_ref())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Grounding(format!(
            "concepts not found in the knowledge graph: {}",
            missing.join(", ")
        )));
    }
    Ok(found.into_iter().flatten().collect())
}

/// Like [`match_concepts`] but leaves unmatched concepts as `None`.
pub fn match_concepts_partial<S: AsRef<str>>(
    concepts: &[S],
    kg: &KnowledgeGraph,
) -> Result<Vec<Option<EntityId>>> {
    if concepts.is_empty() {
        return Err(Error::Grounding("concept set is empty".into()));
    }
    Ok(concepts
        .iter()
        .map(|c| {
            kg.entity_id(&c.as_ref().to_lowercase())
                .filter(|&id| kg.is_unigram(id))
        })
        .collect())
}

fn path_dfs(
    kg: &KnowledgeGraph,
    path: &mut Vec<EntityId>,
    targets: &BTreeSet<EntityId>,
    hops_left: usize,
    out: &mut BTreeSet<Triple>,
) {
    let here = *path.last().expect("path starts at a concept");
    if path.len() > 1 && targets.contains(&here) {
        for w in path.windows(2) {
            out.extend(kg.triples_between(w[0], w[1]));
        }
    }
    if hops_left == 0 {
        return;
    }
    for &next in kg.adjacent(here) {
        if path.contains(&next) {
            continue;
        }
        path.push(next);
        path_dfs(kg, path, targets, hops_left - 1, out);
        path.pop();
    }
}

/// Every triple on a simple path of at most `max_hops` edges between two
/// distinct concepts. Edges are traversed in both directions.
pub fn collect_path_triples(
    concepts: &[EntityId],
    kg: &KnowledgeGraph,
    max_hops: usize,
) -> Result<BTreeSet<Triple>> {
    if !(1..=3).contains(&max_hops) {
        return Err(Error::Config(format!(
            "max_hops must be 1, 2 or 3, got {max_hops}"
        )));
    }
    let targets: BTreeSet<EntityId> = concepts.iter().copied().collect();
    let mut out = BTreeSet::new();
    for &start in &targets {
        let mut path = vec![start];
        path_dfs(kg, &mut path, &targets, max_hops, &mut out);
    }
    Ok(out)
}

/// Triples joining a noun concept to an adjective neighbor or a verb
/// concept to an adverb neighbor.
pub fn collect_pos_neighbor_triples(
    concepts: &[EntityId],
    tags: &[PosTag],
    kg: &KnowledgeGraph,
    lexicon: &PosLexicon,
) -> Result<BTreeSet<Triple>> {
    if tags.len() != concepts.len() {
        return Err(Error::Config(format!(
            "{} concepts but {} part-of-speech tags",
            concepts.len(),
            tags.len()
        )));
    }
    let mut out = BTreeSet::new();
    for (&c, &tag) in concepts.iter().zip(tags) {
        let wanted = match tag {
            PosTag::Noun => PosTag::Adjective,
            PosTag::Verb => PosTag::Adverb,
            other => {
                return Err(Error::Config(format!(
                    "concept {:?} is tagged {other:?}; concepts must be nouns or verbs",
                    kg.entity_name(c)
                )))
            }
        };
        for &n in kg.adjacent(c) {
            if lexicon.has(kg.entity_name(n), wanted) {
                out.extend(kg.triples_between(c, n));
            }
        }
    }
    Ok(out)
}

/// Per concept, the entities adjacent to it through `allowed` triples (or
/// any triple when `None`), excluding the concepts themselves.
pub fn neighbor_candidates(
    concepts: &[EntityId],
    kg: &KnowledgeGraph,
    allowed: Option<&BTreeSet<Triple>>,
) -> Vec<Vec<EntityId>> {
    let set: BTreeSet<EntityId> = concepts.iter().copied().collect();
    concepts
        .iter()
        .map(|&c| {
            kg.adjacent(c)
                .iter()
                .copied()
                .filter(|n| !set.contains(n))
                .filter(|&n| match allowed {
                    None => true,
                    Some(a) => kg.triples_between(c, n).any(|t| a.contains(&t)),
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedNeighbor {
    pub entity: EntityId,
    pub score: f64,
}

/// Cosine similarity, defined as 0 when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Scores each candidate by the sum of its cosine similarity to every
/// concept and keeps the best `top_k` per concept, highest first, ties by
/// ascending entity id. Candidates without a word vector are skipped;
/// concepts without one contribute zero.
pub fn rank_neighbors(
    concepts: &[EntityId],
    candidates: &[Vec<EntityId>],
    kg: &KnowledgeGraph,
    vectors: &WordVectorTable,
    top_k: usize,
) -> Vec<Vec<RankedNeighbor>> {
    let concept_vecs: Vec<Option<Vec<f64>>> = concepts
        .iter()
        .map(|&c| vectors.entity_vector(kg.entity_name(c)))
        .collect();
    candidates
        .iter()
        .map(|cands| {
            let mut ranked: Vec<RankedNeighbor> = cands
                .iter()
                .filter_map(|&n| {
                    let v = vectors.entity_vector(kg.entity_name(n))?;
                    let score = concept_vecs
                        .iter()
                        .flatten()
                        .map(|c| cosine(&v, c))
                        .sum();
                    Some(RankedNeighbor { entity: n, score })
                })
                .collect();
            ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.entity.cmp(&b.entity)));
            ranked.truncate(top_k);
            ranked
        })
        .collect()
}
