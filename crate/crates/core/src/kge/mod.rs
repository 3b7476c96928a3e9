//! TransE entity and relation embeddings.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, IoContext, Result};
use crate::kg::{KnowledgeGraph, Triple};
use crate::numerics::Tensor;
use crate::text::{escape, unescape};

pub const ENTITY_TABLE_FILE: &str = "entities.kgt";
pub const RELATION_TABLE_FILE: &str = "relations.kgt";
pub const ENTITY_NAMES_FILE: &str = "entities.txt";
pub const RELATION_NAMES_FILE: &str = "relations.txt";

const NEGATIVE_RETRIES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct KgeConfig {
    pub dim: usize,
    pub margin: f64,
    pub lr: f64,
    pub epochs: usize,
    pub negatives: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for KgeConfig {
    fn default() -> Self {
        KgeConfig {
            dim: 32,
            margin: 1.0,
            lr: 0.01,
            epochs: 200,
            negatives: 1,
            batch_size: 32,
            seed: 42,
        }
    }
}

impl KgeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        if self.margin.is_nan() || self.margin <= 0.0 {
            return Err(Error::Config(format!("margin must be > 0, got {}", self.margin)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("TransE needs at least one epoch".into()));
        }
        if self.negatives == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "negatives and batch size must be at least 1".into(),
            ));
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.lr)));
        }
        Ok(())
    }
}

/// Entity (`|V|×d`) and relation (`|R|×d`) embedding tables with their names.
#[derive(Debug, Clone, PartialEq)]
pub struct KgeTables {
    entity_names: Vec<String>,
    relation_names: Vec<String>,
    entities: Tensor,
    relations: Tensor,
}

fn row_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl KgeTables {
    pub fn new(
        entity_names: Vec<String>,
        relation_names: Vec<String>,
        entities: Tensor,
        relations: Tensor,
    ) -> Result<Self> {
        if entities.rank() != 2 || relations.rank() != 2 {
            return Err(Error::dim("embedding tables must be matrices"));
        }
        if entities.cols() != relations.cols() {
            return Err(Error::dim(format!(
                "entity dimension {} differs from relation dimension {}",
                entities.cols(),
                relations.cols()
            )));
        }
        if entities.rows() != entity_names.len() || relations.rows() != relation_names.len() {
            return Err(Error::dim("table rows do not match the name lists"));
        }
        Ok(KgeTables {
            entity_names,
            relation_names,
            entities,
            relations,
        })
    }

    /// Uniform initialization in `[-6/√d, 6/√d]`, relations scaled to unit norm.
    pub fn random(kg: &KnowledgeGraph, dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 6.0 / (dim as f64).sqrt();
        let mut draw = |rows: usize| {
            let data = (0..rows * dim).map(|_| rng.random_range(-bound..bound)).collect();
            Tensor::new(vec![rows, dim], data).expect("shape matches data")
        };
        let entities = draw(kg.num_entities());
        let mut relations = draw(kg.num_relations());
        for row in relations.data_mut().chunks_mut(dim) {
            let n = row_norm(row);
            if n > 0.0 {
                row.iter_mut().for_each(|x| *x /= n);
            }
        }
        KgeTables {
            entity_names: kg.entity_names().to_vec(),
            relation_names: kg.relation_names().to_vec(),
            entities,
            relations,
        }
    }

    pub fn dim(&self) -> usize {
        self.entities.cols()
    }

    pub fn num_entities(&self) -> usize {
        self.entity_names.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relation_names.len()
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entity_names
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relation_names
    }

    pub fn entity_table(&self) -> &Tensor {
        &self.entities
    }

    pub fn relation_table(&self) -> &Tensor {
        &self.relations
    }

    pub fn entity(&self, id: usize) -> Result<&[f64]> {
        if id >= self.num_entities() {
            return Err(Error::Lookup(format!("entity id {id} out of range")));
        }
        Ok(self.entities.row(id))
    }

    pub fn relation(&self, id: usize) -> Result<&[f64]> {
        if id >= self.num_relations() {
            return Err(Error::Lookup(format!("relation id {id} out of range")));
        }
        Ok(self.relations.row(id))
    }

    /// `‖v_h + r − v_t‖₂`.
    pub fn score(&self, t: &Triple) -> Result<f64> {
        let h = self.entity(t.head)?;
        let r = self.relation(t.relation)?;
        let tail = self.entity(t.tail)?;
        Ok(h.iter()
            .zip(r)
            .zip(tail)
            .map(|((h, r), t)| (h + r - t).powi(2))
            .sum::<f64>()
            .sqrt())
    }

    /// Projects every entity row into the unit ball.
    pub fn normalize_entities(&mut self) {
        let d = self.dim();
        for row in self.entities.data_mut().chunks_mut(d) {
            let n = row_norm(row);
            if n > 1.0 {
                row.iter_mut().for_each(|x| *x /= n);
            }
        }
    }

    pub fn max_entity_norm(&self) -> f64 {
        self.entities
            .data()
            .chunks(self.dim().max(1))
            .map(row_norm)
            .fold(0.0, f64::max)
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).at(dir)?;
        self.entities.save(&dir.join(ENTITY_TABLE_FILE))?;
        self.relations.save(&dir.join(RELATION_TABLE_FILE))?;
        write_names(&dir.join(ENTITY_NAMES_FILE), &self.entity_names)?;
        write_names(&dir.join(RELATION_NAMES_FILE), &self.relation_names)
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        Self::new(
            read_names(&dir.join(ENTITY_NAMES_FILE))?,
            read_names(&dir.join(RELATION_NAMES_FILE))?,
            Tensor::load(&dir.join(ENTITY_TABLE_FILE))?,
            Tensor::load(&dir.join(RELATION_TABLE_FILE))?,
        )
    }
}

fn write_names(path: &Path, names: &[String]) -> Result<()> {
    let mut out = String::new();
    for n in names {
        out.push_str(&escape(n));
        out.push('\n');
    }
    std::fs::write(path, out).at(path)
}

fn read_names(path: &Path) -> Result<Vec<String>> {
    std::fs::read_to_string(path)
        .at(path)?
        .lines()
        .map(unescape)
        .collect()
}

/// Replaces head or tail (fair coin) with a different uniformly drawn
/// entity, retrying a few times to avoid triples present in `kg`.
pub fn negative_sample(t: &Triple, kg: &KnowledgeGraph, rng: &mut impl Rng) -> Triple {
    let n = kg.num_entities();
    assert!(n >= 2, "negative sampling needs at least two entities");
    let corrupt_head = rng.random_bool(0.5);
    let mut candidate = *t;
    for _ in 0..NEGATIVE_RETRIES {
        let orig = if corrupt_head { t.head } else { t.tail };
        let mut e = rng.random_range(0..n - 1);
        if e >= orig {
            e += 1;
        }
        candidate = if corrupt_head {
            Triple::new(e, t.relation, t.tail)
        } else {
            Triple::new(t.head, t.relation, e)
        };
        if !kg.contains(&candidate) {
            break;
        }
    }
    candidate
}

/// Adds `scale · ∂‖h + r − t‖/∂(h, r, t)` into the gradient buffers.
fn accumulate(
    tables: &KgeTables,
    t: &Triple,
    scale: f64,
    ent_grad: &mut [f64],
    rel_grad: &mut [f64],
) {
    let d = tables.dim();
    let h = tables.entities.row(t.head);
    let r = tables.relations.row(t.relation);
    let tl = tables.entities.row(t.tail);
    let diff: Vec<f64> = (0..d).map(|i| h[i] + r[i] - tl[i]).collect();
    let norm = row_norm(&diff);
    if norm == 0.0 {
        return;
    }
    for i in 0..d {
        let g = scale * diff[i] / norm;
        ent_grad[t.head * d + i] += g;
        rel_grad[t.relation * d + i] += g;
        ent_grad[t.tail * d + i] -= g;
    }
}

/// Result of TransE training: tables plus mean margin loss per epoch.
#[derive(Debug, Clone)]
pub struct TransETrace {
    pub tables: KgeTables,
    pub epoch_loss: Vec<f64>,
}

/// Minibatch SGD on `Σ max(0, γ + d(pos) − d(neg))` over `triples`, with
/// tables covering every entity and relation of `kg`.
pub fn train_transe(
    triples: &[Triple],
    kg: &KnowledgeGraph,
    config: &KgeConfig,
) -> Result<TransETrace> {
    config.validate()?;
    if triples.is_empty() {
        return Err(Error::Data("no triples to train TransE on".into()));
    }
    if kg.num_entities() < 2 {
        return Err(Error::Data("TransE needs at least two entities".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut tables = KgeTables::random(kg, config.dim, &mut rng);
    tables.normalize_entities();
    train_transe_from(&mut tables, triples, kg, config, &mut rng)
        .map(|epoch_loss| TransETrace { tables, epoch_loss })
}

fn train_transe_from(
    tables: &mut KgeTables,
    triples: &[Triple],
    kg: &KnowledgeGraph,
    config: &KgeConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let mut order: Vec<Triple> = triples.to_vec();
    let mut ent_grad = vec![0.0; tables.entities.numel()];
    let mut rel_grad = vec![0.0; tables.relations.numel()];
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            ent_grad.iter_mut().for_each(|g| *g = 0.0);
            rel_grad.iter_mut().for_each(|g| *g = 0.0);
            for pos in batch {
                for _ in 0..config.negatives {
                    let neg = negative_sample(pos, kg, rng);
                    let loss = config.margin + tables.score(pos)? - tables.score(&neg)?;
                    if loss > 0.0 {
                        total += loss;
                        accumulate(tables, pos, 1.0, &mut ent_grad, &mut rel_grad);
                        accumulate(tables, &neg, -1.0, &mut ent_grad, &mut rel_grad);
                    }
                }
            }
            for (w, g) in tables.entities.data_mut().iter_mut().zip(&ent_grad) {
                *w -= config.lr * g;
            }
            for (w, g) in tables.relations.data_mut().iter_mut().zip(&rel_grad) {
                *w -= config.lr * g;
            }
        }
        tables.normalize_entities();
        let mean = total / (order.len() * config.negatives) as f64;
        if !mean.is_finite() {
            return Err(Error::Numeric(format!(
                "TransE loss diverged at epoch {}",
                epoch + 1
            )));
        }
        log::debug!("transe epoch {} loss {mean:.6}", epoch + 1);
        trace.push(mean);
    }
    Ok(trace)
}

/// Mean rank of the true tail among all entities, skipping other tails that
/// also form a known triple with the same head and relation.
pub fn filtered_mean_rank(tables: &KgeTables, test: &[Triple], kg: &KnowledgeGraph) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Data("no triples to rank".into()));
    }
    let mut total = 0usize;
    for t in test {
        let true_score = tables.score(t)?;
        let mut rank = 1;
        for e in 0..tables.num_entities() {
            if e == t.tail {
                continue;
            }
            let c = Triple::new(t.head, t.relation, e);
            if kg.contains(&c) {
                continue;
            }
            if tables.score(&c)? < true_score {
                rank += 1;
            }
        }
        total += rank;
    }
    Ok(total as f64 / test.len() as f64)
}
