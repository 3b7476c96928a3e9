//! File-backed pipeline stages: ground → kge-train → pretrain → finetune →
//! generate → eval → attn. Each stage reads earlier artifacts from the
//! output directory and writes its own, so stages can be re-run on their
//! own.

mod data;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use data::{
    check_id, read_jsonl, write_jsonl, Generation, GroundedRecord, NamedNeighbor, Record,
};

use crate::config::PipelineConfig;
use crate::error::{Error, IoContext, Result};
use crate::evaluation::{concept_attention, evaluate, write_attention_csv, MetricsReport};
use crate::inference::generate_ids;
use crate::kg::{
    build_grounded_graphs, collect_path_triples, collect_pos_neighbor_triples,
    match_concepts_partial, neighbor_candidates, rank_neighbors, GroundedGraphs, KnowledgeGraph,
    PosLexicon, PosTag, RankedNeighbor, Triple, WordVectorTable,
};
use crate::kge::{train_transe, KgeTables};
use crate::model::{load_checkpoint, save_checkpoint, Example, Model, ModelConfig};
use crate::numerics::ParamStore;
use crate::text::{Tokenizer, BOS, MAX_DECODER_LEN, MAX_ENCODER_LEN};
use crate::training::{mask_concepts, run_training, write_trace_csv, TrainReport};

/// Artifact locations under one output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn tokenizer_dir(&self) -> PathBuf {
        self.root.join("tokenizer")
    }

    pub fn grounding_file(&self) -> PathBuf {
        self.root.join("ground").join("grounding.jsonl")
    }

    pub fn selected_triples_file(&self) -> PathBuf {
        self.root.join("ground").join("triples.tsv")
    }

    pub fn kge_dir(&self) -> PathBuf {
        self.root.join("kge")
    }

    pub fn bundle_file(&self, id: &str) -> PathBuf {
        self.root.join("bundles").join(format!("{id}.kgb"))
    }

    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.root.join(stage)
    }

    pub fn checkpoint_dir(&self, stage: &str) -> PathBuf {
        self.stage_dir(stage).join("checkpoint")
    }

    pub fn generations_file(&self) -> PathBuf {
        self.root.join("generations.jsonl")
    }

    pub fn metrics_file(&self) -> PathBuf {
        self.root.join("metrics.json")
    }

    pub fn attention_file(&self, id: &str) -> PathBuf {
        self.root.join("attention").join(format!("{id}.csv"))
    }
}

/// Knowledge-graph side inputs shared by the grounding stages.
#[derive(Debug, Clone)]
pub struct KgInputs {
    pub triples: PathBuf,
    pub vectors: PathBuf,
    pub pos_lexicon: PathBuf,
}

struct KgResources {
    kg: KnowledgeGraph,
    vectors: WordVectorTable,
    lexicon: PosLexicon,
}

impl KgResources {
    fn load(inputs: &KgInputs) -> Result<Self> {
        Ok(KgResources {
            kg: KnowledgeGraph::load(&inputs.triples)?,
            vectors: WordVectorTable::load(&inputs.vectors)?,
            lexicon: PosLexicon::load(&inputs.pos_lexicon)?,
        })
    }
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).at(parent)?;
    }
    Ok(())
}

/// First record per id, in file order. Records sharing an id must share
/// their concept set.
fn unique_records(records: &[Record]) -> Result<Vec<&Record>> {
    let mut seen: BTreeMap<&str, &Record> = BTreeMap::new();
    let mut out = Vec::new();
    for r in records {
        check_id(&r.id)?;
        match seen.get(r.id.as_str()) {
            Some(first) if first.concepts != r.concepts => {
                return Err(Error::Data(format!(
                    "records with id {:?} have different concept sets",
                    r.id
                )))
            }
            Some(_) => {}
            None => {
                seen.insert(&r.id, r);
                out.push(r);
            }
        }
    }
    Ok(out)
}

struct Grounding {
    entities: Vec<Option<usize>>,
    neighbors: Vec<Vec<RankedNeighbor>>,
    triples: BTreeSet<Triple>,
}

fn ground_concepts(
    rec: &Record,
    res: &KgResources,
    cfg: &PipelineConfig,
) -> Result<Grounding> {
    let entities = match_concepts_partial(&rec.concepts, &res.kg)?;
    let missing: Vec<&str> = rec
        .concepts
        .iter()
        .zip(&entities)
        .filter(|(_, e)| e.is_none())
        .map(|(c, _)| c.as_str())
        .collect();
    if !missing.is_empty() {
        if cfg.strict_grounding {
            return Err(Error::Grounding(format!(
                "record {:?}: concepts not found in the knowledge graph: {}",
                rec.id,
                missing.join(", ")
            )));
        }
        log::warn!(
            "record {:?}: {} fall back to zero embeddings",
            rec.id,
            missing.join(", ")
        );
    }
    if rec.pos.len() != rec.concepts.len() {
        return Err(Error::Config(format!(
            "record {:?} has {} concepts but {} part-of-speech tags",
            rec.id,
            rec.concepts.len(),
            rec.pos.len()
        )));
    }
    let mut matched = Vec::new();
    let mut tags = Vec::new();
    for (e, tag) in entities.iter().zip(&rec.pos) {
        if let Some(e) = e {
            matched.push(*e);
            tags.push(tag.parse::<PosTag>()?);
        }
    }
    let mut triples = collect_path_triples(&matched, &res.kg, cfg.max_hops)?;
    let pos = collect_pos_neighbor_triples(&matched, &tags, &res.kg, &res.lexicon)?;
    let candidates = neighbor_candidates(&matched, &res.kg, Some(&pos));
    let ranked = rank_neighbors(&matched, &candidates, &res.kg, &res.vectors, cfg.top_k);
    triples.extend(pos);
    let mut ranked = ranked.into_iter();
    let neighbors = entities
        .iter()
        .map(|e| match e {
            Some(_) => ranked.next().expect("one list per matched concept"),
            None => Vec::new(),
        })
        .collect();
    Ok(Grounding {
        entities,
        neighbors,
        triples,
    })
}

fn to_named(rec: &Record, g: &Grounding, kg: &KnowledgeGraph) -> GroundedRecord {
    GroundedRecord {
        id: rec.id.clone(),
        concepts: rec.concepts.clone(),
        entities: g
            .entities
            .iter()
            .map(|e| e.map(|e| kg.entity_name(e).to_string()))
            .collect(),
        neighbors: g
            .neighbors
            .iter()
            .map(|list| {
                list.iter()
                    .map(|n| NamedNeighbor {
                        entity: kg.entity_name(n.entity).to_string(),
                        score: n.score,
                    })
                    .collect()
            })
            .collect(),
    }
}

fn resolve(kg: &KnowledgeGraph, name: &str) -> Result<usize> {
    kg.entity_id(name).ok_or_else(|| {
        Error::Grounding(format!("entity {name:?} is not in the knowledge graph"))
    })
}

fn from_named(rec: &GroundedRecord, kg: &KnowledgeGraph) -> Result<Grounding> {
    let entities = rec
        .entities
        .iter()
        .map(|e| e.as_deref().map(|n| resolve(kg, n)).transpose())
        .collect::<Result<Vec<_>>>()?;
    let neighbors = rec
        .neighbors
        .iter()
        .map(|list| {
            list.iter()
                .map(|n| {
                    Ok(RankedNeighbor {
                        entity: resolve(kg, &n.entity)?,
                        score: n.score,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Grounding {
        entities,
        neighbors,
        triples: BTreeSet::new(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundSummary {
    pub records: usize,
    pub selected_triples: usize,
    pub vocab_size: usize,
}

/// Symbolic grounding of every concept set in `dataset` (and `val`), the
/// union of selected triples for embedding training, and a BPE tokenizer
/// trained on the training sentences and concepts.
pub fn ground(
    cfg: &PipelineConfig,
    inputs: &KgInputs,
    dataset: &Path,
    val: Option<&Path>,
    layout: &Layout,
) -> Result<GroundSummary> {
    cfg.validate()?;
    let res = KgResources::load(inputs)?;
    let train: Vec<Record> = read_jsonl(dataset)?;
    if train.is_empty() {
        return Err(Error::Data(format!("{} has no records", dataset.display())));
    }
    let mut all = train.clone();
    if let Some(v) = val {
        all.extend(read_jsonl::<Record>(v)?);
    }
    let unique = unique_records(&all)?;
    let grounded: Vec<Grounding> = unique
        .par_iter()
        .map(|r| ground_concepts(r, &res, cfg))
        .collect::<Result<_>>()?;
    let mut selected = BTreeSet::new();
    for g in &grounded {
        selected.extend(g.triples.iter().copied());
    }
    let named: Vec<GroundedRecord> = unique
        .iter()
        .zip(&grounded)
        .map(|(r, g)| to_named(r, g, &res.kg))
        .collect();
    let path = layout.grounding_file();
    create_parent(&path)?;
    write_jsonl(&path, &named)?;
    let tsv: String = selected
        .iter()
        .map(|t| {
            format!(
                "{}\t{}\t{}\n",
                res.kg.entity_name(t.head),
                res.kg.relation_name(t.relation),
                res.kg.entity_name(t.tail)
            )
        })
        .collect();
    let tpath = layout.selected_triples_file();
    std::fs::write(&tpath, tsv).at(&tpath)?;

    let mut corpus: Vec<String> = Vec::new();
    for r in &train {
        corpus.push(r.concepts.join(" "));
        corpus.extend(r.sentences().map(str::to_string));
    }
    let tokenizer = Tokenizer::train(&corpus, cfg.bpe_symbols)?;
    let tdir = layout.tokenizer_dir();
    std::fs::create_dir_all(&tdir).at(&tdir)?;
    tokenizer.save_dir(&tdir)?;
    log::info!(
        "grounded {} concept sets; {} triples selected; vocabulary of {}",
        unique.len(),
        selected.len(),
        tokenizer.vocab_size()
    );
    Ok(GroundSummary {
        records: unique.len(),
        selected_triples: selected.len(),
        vocab_size: tokenizer.vocab_size(),
    })
}

/// Trains TransE on the selected triples and writes one grounded-graph
/// bundle per grounded concept set.
pub fn kge_train(cfg: &PipelineConfig, triples: &Path, layout: &Layout) -> Result<Vec<f64>> {
    cfg.validate()?;
    let kg = KnowledgeGraph::load(triples)?;
    let selected_path = layout.selected_triples_file();
    let text = std::fs::read_to_string(&selected_path).at(&selected_path)?;
    let mut selected = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let cols: Vec<&str> = line.split('\t').collect();
        let parse_err = |message: String| Error::Parse {
            path: selected_path.display().to_string(),
            line: i + 1,
            message,
        };
        if cols.len() != 3 {
            return Err(parse_err("expected head<TAB>relation<TAB>tail".into()));
        }
        let head = kg.entity_id(cols[0]);
        let rel = kg.relation_id(cols[1]);
        let tail = kg.entity_id(cols[2]);
        match (head, rel, tail) {
            (Some(h), Some(r), Some(t)) => selected.push(Triple::new(h, r, t)),
            _ => return Err(parse_err(format!("triple {line:?} is not in {}", triples.display()))),
        }
    }
    let trace = train_transe(&selected, &kg, &cfg.kge)?;
    let dir = layout.kge_dir();
    trace.tables.save_dir(&dir)?;
    let loss: String = std::iter::once("epoch,loss\n".to_string())
        .chain(
            trace
                .epoch_loss
                .iter()
                .enumerate()
                .map(|(i, l)| format!("{},{l}\n", i + 1)),
        )
        .collect();
    let lpath = dir.join("loss.csv");
    std::fs::write(&lpath, loss).at(&lpath)?;

    let grounded: Vec<GroundedRecord> = read_jsonl(&layout.grounding_file())?;
    if let Some(first) = grounded.first() {
        create_parent(&layout.bundle_file(&first.id))?;
    }
    grounded
        .par_iter()
        .map(|rec| {
            let g = from_named(rec, &kg)?;
            let bundle =
                build_grounded_graphs(&rec.concepts, &g.entities, &g.neighbors, &trace.tables, &kg)?;
            bundle.save(&layout.bundle_file(&rec.id))
        })
        .collect::<Result<Vec<()>>>()?;
    log::info!(
        "TransE over {} triples; {} bundles written",
        selected.len(),
        grounded.len()
    );
    Ok(trace.epoch_loss)
}

/// Grounded graphs for a concept set, with concept vectors only.
fn concept_only_graphs(concepts: &[String], tables: &KgeTables) -> Result<GroundedGraphs> {
    let names: BTreeMap<&str, usize> = tables
        .entity_names()
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let entities: Vec<Option<usize>> = concepts
        .iter()
        .map(|c| names.get(c.to_lowercase().as_str()).copied())
        .collect();
    let empty = vec![Vec::new(); concepts.len()];
    build_grounded_graphs(concepts, &entities, &empty, tables, &KnowledgeGraph::new())
}

fn model_config(cfg: &PipelineConfig, tokenizer: &Tokenizer, tables: &KgeTables) -> ModelConfig {
    ModelConfig {
        vocab_size: tokenizer.vocab_size(),
        d_entity: tables.dim(),
        ..cfg.model.clone()
    }
}

fn save_stage(
    layout: &Layout,
    stage: &str,
    model: &Model,
    report: &TrainReport,
) -> Result<()> {
    save_checkpoint(&layout.checkpoint_dir(stage), model, &report.best)?;
    write_trace_csv(&report.trace, &layout.stage_dir(stage).join("trace.csv"))
}

/// Concept-mask pre-training on five-concept sets drawn from the matched
/// training concepts.
pub fn pretrain(cfg: &PipelineConfig, layout: &Layout) -> Result<TrainReport> {
    cfg.validate()?;
    let tokenizer = Tokenizer::load_dir(&layout.tokenizer_dir())?;
    let tables = KgeTables::load_dir(&layout.kge_dir())?;
    let grounded: Vec<GroundedRecord> = read_jsonl(&layout.grounding_file())?;
    let pool: Vec<String> = grounded
        .iter()
        .flat_map(|r| r.entities.iter().flatten().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if pool.len() < crate::training::PRETRAIN_CONCEPTS {
        return Err(Error::Data(format!(
            "pre-training needs at least {} matched concepts, found {}",
            crate::training::PRETRAIN_CONCEPTS,
            pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut examples = Vec::with_capacity(cfg.pretrain_sets);
    for _ in 0..cfg.pretrain_sets {
        let picks = index::sample(&mut rng, pool.len(), crate::training::PRETRAIN_CONCEPTS);
        let concepts: Vec<String> = picks.iter().map(|i| pool[i].clone()).collect();
        let enc = tokenizer.encode_concepts(&concepts, MAX_ENCODER_LEN)?;
        if enc.spans.len() != concepts.len() {
            log::warn!("skipping pre-training set {concepts:?}: too long for the encoder");
            continue;
        }
        let masked = mask_concepts(&enc, &mut rng)?;
        examples.push(Example {
            enc_ids: masked.input.ids,
            spans: masked.input.spans,
            graphs: concept_only_graphs(&concepts, &tables)?,
            target: masked.target,
        });
    }
    let mut store = ParamStore::new();
    let model = Model::new(model_config(cfg, &tokenizer, &tables), &mut store, cfg.seed)?;
    let report = run_training(&model, &mut store, &examples, &[], &cfg.pretrain)?;
    save_stage(layout, "pretrain", &model, &report)?;
    Ok(report)
}

fn load_bundle(layout: &Layout, id: &str) -> Result<GroundedGraphs> {
    GroundedGraphs::load(&layout.bundle_file(id))
}

/// Training examples from dataset records and their bundles, one per
/// reference sentence.
pub fn build_examples(
    records: &[Record],
    tokenizer: &Tokenizer,
    layout: &Layout,
) -> Result<Vec<Example>> {
    let mut cache: BTreeMap<String, (Vec<usize>, Vec<crate::text::ConceptSpan>, GroundedGraphs)> =
        BTreeMap::new();
    let mut out = Vec::new();
    for r in records {
        check_id(&r.id)?;
        if r.sentences().next().is_none() {
            return Err(Error::Data(format!("record {:?} has no target sentence", r.id)));
        }
        if !cache.contains_key(&r.id) {
            let enc = tokenizer.encode_concepts(&r.concepts, MAX_ENCODER_LEN)?;
            let mut graphs = load_bundle(layout, &r.id)?;
            graphs.truncate(enc.spans.len());
            cache.insert(r.id.clone(), (enc.ids, enc.spans, graphs));
        }
        let (ids, spans, graphs) = &cache[&r.id];
        for sentence in r.sentences() {
            out.push(Example {
                enc_ids: ids.clone(),
                spans: spans.clone(),
                graphs: graphs.clone(),
                target: tokenizer.encode_target(sentence, MAX_DECODER_LEN),
            });
        }
    }
    Ok(out)
}

/// Fine-tunes on `dataset`, optionally starting from the parameters of the
/// checkpoint at `init`; the best validation epoch is kept.
pub fn finetune(
    cfg: &PipelineConfig,
    dataset: &Path,
    val: Option<&Path>,
    init: Option<&Path>,
    layout: &Layout,
) -> Result<TrainReport> {
    cfg.validate()?;
    let tokenizer = Tokenizer::load_dir(&layout.tokenizer_dir())?;
    let tables = KgeTables::load_dir(&layout.kge_dir())?;
    let train = build_examples(&read_jsonl(dataset)?, &tokenizer, layout)?;
    let val = match val {
        Some(p) => build_examples(&read_jsonl(p)?, &tokenizer, layout)?,
        None => Vec::new(),
    };
    let mut store = ParamStore::new();
    let model = Model::new(model_config(cfg, &tokenizer, &tables), &mut store, cfg.seed)?;
    if let Some(init) = init {
        let (pre, pre_store) = load_checkpoint(init)?;
        if pre.config() != model.config() {
            return Err(Error::Config(format!(
                "checkpoint {} was trained with a different model configuration",
                init.display()
            )));
        }
        let copied = store.copy_matching(&pre_store);
        log::info!("initialized {copied} parameter tensors from {}", init.display());
    }
    let report = run_training(&model, &mut store, &train, &val, &cfg.finetune)?;
    save_stage(layout, "finetune", &model, &report)?;
    Ok(report)
}

/// Bundle from an earlier stage when present, otherwise fresh grounding
/// against the knowledge-graph inputs and the trained embeddings.
fn graphs_for(
    rec: &Record,
    layout: &Layout,
    res: Option<&KgResources>,
    tables: &KgeTables,
    cfg: &PipelineConfig,
) -> Result<GroundedGraphs> {
    let path = layout.bundle_file(&rec.id);
    if path.exists() {
        return GroundedGraphs::load(&path);
    }
    let res = res.ok_or_else(|| {
        Error::Usage(format!(
            "no bundle for {:?}; pass --triples, --vectors and --pos-lexicon to ground it",
            rec.id
        ))
    })?;
    let g = ground_concepts(rec, res, cfg)?;
    build_grounded_graphs(&rec.concepts, &g.entities, &g.neighbors, tables, &res.kg)
}

/// Loaded checkpoint, tokenizer, embeddings and optional grounding inputs.
struct Decoder {
    model: Model,
    store: ParamStore,
    tokenizer: Tokenizer,
    tables: KgeTables,
    res: Option<KgResources>,
}

impl Decoder {
    fn load(checkpoint: &Path, kg: Option<&KgInputs>, layout: &Layout) -> Result<Self> {
        let (model, store) = load_checkpoint(checkpoint)?;
        let tokenizer = Tokenizer::load_dir(&layout.tokenizer_dir())?;
        if tokenizer.vocab_size() != model.config().vocab_size {
            return Err(Error::Config(format!(
                "checkpoint expects {} tokens but the tokenizer has {}",
                model.config().vocab_size,
                tokenizer.vocab_size()
            )));
        }
        let tables = KgeTables::load_dir(&layout.kge_dir())?;
        let res = kg.map(KgResources::load).transpose()?;
        Ok(Decoder {
            model,
            store,
            tokenizer,
            tables,
            res,
        })
    }

    fn example(&self, rec: &Record, layout: &Layout, cfg: &PipelineConfig) -> Result<Example> {
        check_id(&rec.id)?;
        let enc = self.tokenizer.encode_concepts(&rec.concepts, MAX_ENCODER_LEN)?;
        let mut graphs = graphs_for(rec, layout, self.res.as_ref(), &self.tables, cfg)?;
        graphs.truncate(enc.spans.len());
        Ok(Example {
            enc_ids: enc.ids,
            spans: enc.spans,
            graphs,
            target: vec![BOS],
        })
    }
}

/// Beam-search generation for every concept set in `dataset`.
pub fn generate(
    cfg: &PipelineConfig,
    checkpoint: &Path,
    dataset: &Path,
    kg: Option<&KgInputs>,
    layout: &Layout,
) -> Result<Vec<Generation>> {
    cfg.validate()?;
    let dec = Decoder::load(checkpoint, kg, layout)?;
    let records: Vec<Record> = read_jsonl(dataset)?;
    let unique = unique_records(&records)?;
    let gens: Vec<Generation> = unique
        .par_iter()
        .map(|rec| {
            let ex = dec.example(rec, layout, cfg)?;
            let ids = generate_ids(
                &dec.model,
                &dec.store,
                &ex.enc_ids,
                &ex.spans,
                &ex.graphs,
                &cfg.beam,
            )?;
            Ok(Generation {
                id: rec.id.clone(),
                generation: dec.tokenizer.decode(&ids).trim().to_string(),
            })
        })
        .collect::<Result<_>>()?;
    let path = layout.generations_file();
    create_parent(&path)?;
    write_jsonl(&path, &gens)?;
    Ok(gens)
}

/// Scores generations against reference records grouped by id.
pub fn eval(generations: &Path, references: &Path) -> Result<MetricsReport> {
    let gens: Vec<Generation> = read_jsonl(generations)?;
    let refs: Vec<Record> = read_jsonl(references)?;
    let mut grouped: BTreeMap<&str, (&Vec<String>, Vec<&str>)> = BTreeMap::new();
    for r in &refs {
        let entry = grouped.entry(&r.id).or_insert((&r.concepts, Vec::new()));
        entry.1.extend(r.sentences());
    }
    let gen_ids: BTreeSet<&str> = gens.iter().map(|g| g.id.as_str()).collect();
    if gen_ids.len() != gens.len() {
        return Err(Error::Data(format!(
            "{} repeats a generation id",
            generations.display()
        )));
    }
    let ref_ids: BTreeSet<&str> = grouped.keys().copied().collect();
    if gen_ids != ref_ids {
        let only_gen: Vec<&str> = gen_ids.difference(&ref_ids).copied().collect();
        let only_ref: Vec<&str> = ref_ids.difference(&gen_ids).copied().collect();
        return Err(Error::Data(format!(
            "ids differ between generations and references (only generated: {only_gen:?}; only referenced: {only_ref:?})"
        )));
    }
    let texts: Vec<&str> = gens.iter().map(|g| g.generation.as_str()).collect();
    let references: Vec<Vec<&str>> = gens.iter().map(|g| grouped[g.id.as_str()].1.clone()).collect();
    let concepts: Vec<Vec<String>> = gens
        .iter()
        .map(|g| grouped[g.id.as_str()].0.clone())
        .collect();
    evaluate(&texts, &references, &concepts)
}

pub fn write_metrics(report: &MetricsReport, path: &Path) -> Result<()> {
    create_parent(path)?;
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Data(format!("cannot serialize metrics: {e}")))?;
    std::fs::write(path, json + "\n").at(path)
}

/// Writes the head-averaged concept attention of the last KG encoder layer
/// for one example and returns the CSV path.
pub fn attention(
    cfg: &PipelineConfig,
    checkpoint: &Path,
    dataset: &Path,
    example_id: &str,
    kg: Option<&KgInputs>,
    layout: &Layout,
) -> Result<PathBuf> {
    let dec = Decoder::load(checkpoint, kg, layout)?;
    let records: Vec<Record> = read_jsonl(dataset)?;
    let rec = records
        .iter()
        .find(|r| r.id == example_id)
        .ok_or_else(|| Error::Data(format!("no record with id {example_id:?}")))?;
    let ex = dec.example(rec, layout, cfg)?;
    let matrix = concept_attention(&dec.model, &dec.store, &ex)?;
    let path = layout.attention_file(&rec.id);
    create_parent(&path)?;
    let labels = rec.concepts[..ex.spans.len()].to_vec();
    write_attention_csv(&labels, &matrix, &path)?;
    Ok(path)
}

#[cfg(test)]
mod tests;
