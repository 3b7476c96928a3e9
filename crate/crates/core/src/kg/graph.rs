use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;

use crate::error::{Error, IoContext, Result};

pub type EntityId = usize;
pub type RelationId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Triple {
            head,
            relation,
            tail,
        }
    }
}

/// Entity and relation tables over a deduplicated triple store, with
/// directed and undirected adjacency.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    entities: Vec<String>,
    entity_index: HashMap<String, EntityId>,
    unigram: Vec<bool>,
    relations: Vec<String>,
    relation_index: HashMap<String, RelationId>,
    triples: Vec<Triple>,
    triple_set: HashSet<Triple>,
    outgoing: Vec<Vec<(RelationId, EntityId)>>,
    incoming: Vec<Vec<(RelationId, EntityId)>>,
    adjacent: Vec<BTreeSet<EntityId>>,
    pair_edges: HashMap<(EntityId, EntityId), Vec<usize>>,
}

/// `/c/en/fish/n` → `fish`, `using net` → `using_net`.
fn normalize_entity(raw: &str) -> String {
    let s = raw.trim();
    let s = s.strip_prefix("/c/en/").unwrap_or(s);
    let s = s.split('/').next().unwrap_or(s);
    s.to_lowercase().replace(' ', "_")
}

fn normalize_relation(raw: &str) -> String {
    let s = raw.trim();
    s.strip_prefix("/r/").unwrap_or(s).to_string()
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn num_triples(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty() && self.entities.is_empty()
    }

    pub fn entity_name(&self, id: EntityId) -> &str {
        &self.entities[id]
    }

    pub fn relation_name(&self, id: RelationId) -> &str {
        &self.relations[id]
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entities
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relations
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entity_index.get(name).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relation_index.get(name).copied()
    }

    pub fn is_unigram(&self, id: EntityId) -> bool {
        self.unigram[id]
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.triple_set.contains(t)
    }

    pub fn outgoing(&self, e: EntityId) -> &[(RelationId, EntityId)] {
        &self.outgoing[e]
    }

    pub fn incoming(&self, e: EntityId) -> &[(RelationId, EntityId)] {
        &self.incoming[e]
    }

    /// Entities joined to `e` by a triple in either direction, ascending.
    pub fn adjacent(&self, e: EntityId) -> &BTreeSet<EntityId> {
        &self.adjacent[e]
    }

    /// Every triple connecting `a` and `b` in either direction.
    pub fn triples_between(&self, a: EntityId, b: EntityId) -> impl Iterator<Item = Triple> + '_ {
        self.pair_edges
            .get(&(a.min(b), a.max(b)))
            .into_iter()
            .flatten()
            .map(|&i| self.triples[i])
    }

    pub fn add_entity(&mut self, name: &str) -> EntityId {
        if let Some(&id) = self.entity_index.get(name) {
            return id;
        }
        let id = self.entities.len();
        self.entities.push(name.to_string());
        self.entity_index.insert(name.to_string(), id);
        self.unigram.push(!name.contains('_') && !name.contains(' '));
        self.outgoing.push(Vec::new());
        self.incoming.push(Vec::new());
        self.adjacent.push(BTreeSet::new());
        id
    }

    pub fn add_relation(&mut self, name: &str) -> RelationId {
        if let Some(&id) = self.relation_index.get(name) {
            return id;
        }
        let id = self.relations.len();
        self.relations.push(name.to_string());
        self.relation_index.insert(name.to_string(), id);
        id
    }

    /// Inserts a triple by name; returns false when it was already present.
    pub fn add_triple(&mut self, head: &str, relation: &str, tail: &str) -> bool {
        let h = self.add_entity(head);
        let r = self.add_relation(relation);
        let t = self.add_entity(tail);
        self.insert(Triple::new(h, r, t))
    }

    fn insert(&mut self, t: Triple) -> bool {
        if !self.triple_set.insert(t) {
            return false;
        }
        let idx = self.triples.len();
        self.triples.push(t);
        self.outgoing[t.head].push((t.relation, t.tail));
        self.incoming[t.tail].push((t.relation, t.head));
        if t.head != t.tail {
            self.adjacent[t.head].insert(t.tail);
            self.adjacent[t.tail].insert(t.head);
        }
        self.pair_edges
            .entry((t.head.min(t.tail), t.head.max(t.tail)))
            .or_default()
            .push(idx);
        true
    }

    /// Parses `subject<TAB>relation<TAB>object[<TAB>weight]` lines. Blank
    /// lines and lines starting with `#` are skipped. `origin` names the
    /// source in parse errors.
    pub fn from_tsv(text: &str, origin: &str) -> Result<Self> {
        let mut kg = KnowledgeGraph::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                message,
            };
            let cols: Vec<&str> = line.split('\t').collect();
            if !(3..=4).contains(&cols.len()) {
                return Err(parse_err(format!(
                    "expected 3 or 4 tab-separated columns, found {}",
                    cols.len()
                )));
            }
            let head = normalize_entity(cols[0]);
            let rel = normalize_relation(cols[1]);
            let tail = normalize_entity(cols[2]);
            if head.is_empty() || rel.is_empty() || tail.is_empty() {
                return Err(parse_err("empty subject, relation or object".into()));
            }
            if let Some(w) = cols.get(3) {
                if w.trim().parse::<f64>().is_err() {
                    return Err(parse_err(format!("weight {w:?} is not a number")));
                }
            }
            kg.add_triple(&head, &rel, &tail);
        }
        Ok(kg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        Self::from_tsv(&text, &path.display().to_string())
    }
}
