//! Knowledge-graph storage, concept grounding and graph bundles.

mod bundle;
mod graph;
mod grounding;
mod lexicon;

pub use bundle::{build_grounded_graphs, GroundedGraphs, NeighborEdge, BUNDLE_MAGIC};
pub use graph::{EntityId, KnowledgeGraph, RelationId, Triple};
pub use grounding::{
    collect_path_triples, collect_pos_neighbor_triples, cosine, match_concepts,
    match_concepts_partial, neighbor_candidates, rank_neighbors, RankedNeighbor,
};
pub use lexicon::{PosLexicon, PosTag, WordVectorTable};
