//! Small random fixtures shared by unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::kg::{GroundedGraphs, NeighborEdge};
use crate::model::{Example, ModelConfig};
use crate::numerics::Tensor;
use crate::text::{ConceptSpan, BOS, EOS};

pub(crate) fn tiny_config(kg_layers: usize) -> ModelConfig {
    ModelConfig {
        text_layers: 1,
        kg_layers,
        heads: 2,
        d_model: 8,
        d_ff: 12,
        d_entity: 8,
        kernel_size: 2,
        vocab_size: 20,
        dropout: 0.0,
        ..ModelConfig::default()
    }
}

pub(crate) fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Random grounded graphs; concept `i` gets `counts[i]` neighbors.
pub(crate) fn toy_graphs(counts: &[usize], d: usize, seed: u64) -> GroundedGraphs {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = counts.len();
    GroundedGraphs {
        concepts: (0..k).map(|i| format!("c{i}")).collect(),
        entities: (0..k).map(Some).collect(),
        concept_vectors: random_tensor(&mut rng, &[k, d]),
        neighbors: counts
            .iter()
            .map(|&n| {
                (0..n)
                    .map(|j| NeighborEdge {
                        entity: 100 + j,
                        relation: 0,
                        score: 0.0,
                    })
                    .collect()
            })
            .collect(),
        neighbor_vectors: counts.iter().map(|&n| random_tensor(&mut rng, &[n, d])).collect(),
        neighbor_relations: counts.iter().map(|&n| random_tensor(&mut rng, &[n, d])).collect(),
    }
}

pub(crate) fn spans_of(widths: &[usize]) -> Vec<ConceptSpan> {
    let mut start = 0;
    widths
        .iter()
        .enumerate()
        .map(|(concept, &w)| {
            let sp = ConceptSpan {
                concept,
                start,
                end: start + w,
            };
            start += w;
            sp
        })
        .collect()
}

pub(crate) fn toy_example(widths: &[usize], counts: &[usize], seed: u64) -> Example {
    let n: usize = widths.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let enc_ids = (0..n).map(|_| rng.random_range(5..20)).collect();
    let mut target = vec![BOS];
    target.extend((0..4).map(|_| rng.random_range(5..20)));
    target.push(EOS);
    Example {
        enc_ids,
        spans: spans_of(widths),
        graphs: toy_graphs(counts, 8, seed + 1),
        target,
    }
}

