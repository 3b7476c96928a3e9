use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::graph::{EntityId, KnowledgeGraph, RelationId};
use super::grounding::RankedNeighbor;
use crate::error::{Error, IoContext, Result};
use crate::kge::KgeTables;
use crate::numerics::Tensor;

pub const BUNDLE_MAGIC: &[u8; 4] = b"KGB1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborEdge {
    pub entity: EntityId,
    pub relation: RelationId,
    pub score: f64,
}

/// Concept-reasoning graph plus ranked neighbors for one concept set.
/// Row `i` of `concept_vectors` is `v^R_i`; concepts that did not match the
/// knowledge graph carry a zero vector and no neighbors.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundedGraphs {
    pub concepts: Vec<String>,
    pub entities: Vec<Option<EntityId>>,
    pub concept_vectors: Tensor,
    pub neighbors: Vec<Vec<NeighborEdge>>,
    pub neighbor_vectors: Vec<Tensor>,
    pub neighbor_relations: Vec<Tensor>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dim: usize,
    concepts: Vec<String>,
    entities: Vec<Option<EntityId>>,
    neighbors: Vec<Vec<NeighborEdge>>,
}

impl GroundedGraphs {
    pub fn num_concepts(&self) -> usize {
        self.concepts.len()
    }

    pub fn dim(&self) -> usize {
        self.concept_vectors.cols()
    }

    pub fn num_neighbors(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum()
    }

    /// `r^R` as a `(k·k)×d` matrix whose row `i·k + j` is `v^R_i − v^R_j`.
    pub fn relation_diffs(&self) -> Tensor {
        let k = self.num_concepts();
        let d = self.dim();
        let v = &self.concept_vectors;
        let mut data = Vec::with_capacity(k * k * d);
        for i in 0..k {
            for j in 0..k {
                data.extend(v.row(i).iter().zip(v.row(j)).map(|(a, b)| a - b));
            }
        }
        Tensor::new(vec![k * k, d], data).expect("shape matches data")
    }

    /// Keeps the first `k` concepts.
    pub fn truncate(&mut self, k: usize) {
        if k >= self.num_concepts() {
            return;
        }
        let d = self.dim();
        self.concepts.truncate(k);
        self.entities.truncate(k);
        self.neighbors.truncate(k);
        self.neighbor_vectors.truncate(k);
        self.neighbor_relations.truncate(k);
        let data = self.concept_vectors.data()[..k * d].to_vec();
        self.concept_vectors = Tensor::new(vec![k, d], data).expect("shape matches data");
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let header = Header {
            dim: self.dim(),
            concepts: self.concepts.clone(),
            entities: self.entities.clone(),
            neighbors: self.neighbors.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(std::io::Error::other)?;
        w.write_all(BUNDLE_MAGIC)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        self.concept_vectors.write_to(w)?;
        for (v, r) in self.neighbor_vectors.iter().zip(&self.neighbor_relations) {
            v.write_to(w)?;
            r.write_to(w)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let io = |e: std::io::Error| Error::Data(format!("truncated graph bundle: {e}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != BUNDLE_MAGIC {
            return Err(Error::Data("not a graph bundle (bad magic)".into()));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len).map_err(io)?;
        let len = u64::from_le_bytes(len) as usize;
        if len > 1 << 30 {
            return Err(Error::Data("graph bundle header too large".into()));
        }
        let mut json = vec![0u8; len];
        r.read_exact(&mut json).map_err(io)?;
        let header: Header = serde_json::from_slice(&json)
            .map_err(|e| Error::Data(format!("bad graph bundle header: {e}")))?;
        let k = header.concepts.len();
        if header.entities.len() != k || header.neighbors.len() != k {
            return Err(Error::Data("graph bundle header lists disagree".into()));
        }
        let concept_vectors = Tensor::read_from(r)?;
        if concept_vectors.shape() != [k, header.dim] {
            return Err(Error::dim(format!(
                "bundle concept table has shape {:?}, expected [{k}, {}]",
                concept_vectors.shape(),
                header.dim
            )));
        }
        let mut neighbor_vectors = Vec::with_capacity(k);
        let mut neighbor_relations = Vec::with_capacity(k);
        for n in &header.neighbors {
            let v = Tensor::read_from(r)?;
            let rel = Tensor::read_from(r)?;
            for t in [&v, &rel] {
                if t.shape() != [n.len(), header.dim] {
                    return Err(Error::dim(format!(
                        "bundle neighbor table has shape {:?}, expected [{}, {}]",
                        t.shape(),
                        n.len(),
                        header.dim
                    )));
                }
            }
            neighbor_vectors.push(v);
            neighbor_relations.push(rel);
        }
        Ok(GroundedGraphs {
            concepts: header.concepts,
            entities: header.entities,
            concept_vectors,
            neighbors: header.neighbors,
            neighbor_vectors,
            neighbor_relations,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).at(path)?;
        std::fs::write(path, buf).at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).at(path)?;
        Self::read_from(&mut bytes.as_slice())
    }
}

/// Attaches TransE embeddings to matched concepts and their ranked
/// neighbors. When several relations join a concept and a neighbor, the
/// triple with the smallest TransE score supplies `r^N`.
pub fn build_grounded_graphs<S: AsRef<str>>(
    concepts: &[S],
    entities: &[Option<EntityId>],
    neighbors: &[Vec<RankedNeighbor>],
    tables: &KgeTables,
    kg: &KnowledgeGraph,
) -> Result<GroundedGraphs> {
    let k = concepts.len();
    if k == 0 {
        return Err(Error::Grounding("concept set is empty".into()));
    }
    if entities.len() != k || neighbors.len() != k {
        return Err(Error::Grounding(format!(
            "{k} concepts but {} entity ids and {} neighbor lists",
            entities.len(),
            neighbors.len()
        )));
    }
    let d = tables.dim();
    let lookup = |e: EntityId| {
        tables
            .entity(e)
            .map_err(|_| Error::Grounding(format!("no embedding for entity {e}")))
    };
    let mut concept_data = Vec::with_capacity(k * d);
    let mut edges = Vec::with_capacity(k);
    let mut nv = Vec::with_capacity(k);
    let mut nr = Vec::with_capacity(k);
    for (i, entity) in entities.iter().enumerate() {
        let Some(c) = *entity else {
            if !neighbors[i].is_empty() {
                return Err(Error::Grounding(format!(
                    "unmatched concept {:?} cannot have neighbors",
                    concepts[i].as_ref()
                )));
            }
            concept_data.extend(std::iter::repeat_n(0.0, d));
            edges.push(Vec::new());
            nv.push(Tensor::zeros(&[0, d]));
            nr.push(Tensor::zeros(&[0, d]));
            continue;
        };
        concept_data.extend_from_slice(lookup(c)?);
        let mut list = Vec::with_capacity(neighbors[i].len());
        let mut vdata = Vec::new();
        let mut rdata = Vec::new();
        for n in &neighbors[i] {
            let mut best: Option<(f64, RelationId)> = None;
            for t in kg.triples_between(c, n.entity) {
                let s = tables
                    .score(&t)
                    .map_err(|e| Error::Grounding(e.to_string()))?;
                if best.is_none_or(|(b, r)| s < b || (s == b && t.relation < r)) {
                    best = Some((s, t.relation));
                }
            }
            let Some((_, relation)) = best else {
                return Err(Error::Grounding(format!(
                    "neighbor {:?} is not adjacent to concept {:?}",
                    kg.entity_name(n.entity),
                    concepts[i].as_ref()
                )));
            };
            vdata.extend_from_slice(lookup(n.entity)?);
            rdata.extend_from_slice(
                tables
                    .relation(relation)
                    .map_err(|e| Error::Grounding(e.to_string()))?,
            );
            list.push(NeighborEdge {
                entity: n.entity,
                relation,
                score: n.score,
            });
        }
        nv.push(Tensor::new(vec![list.len(), d], vdata)?);
        nr.push(Tensor::new(vec![list.len(), d], rdata)?);
        edges.push(list);
    }
    Ok(GroundedGraphs {
        concepts: concepts.iter().map(|c| c.as_ref().to_string()).collect(),
        entities: entities.to_vec(),
        concept_vectors: Tensor::new(vec![k, d], concept_data)?,
        neighbors: edges,
        neighbor_vectors: nv,
        neighbor_relations: nr,
    })
}
