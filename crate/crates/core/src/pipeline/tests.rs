use std::path::PathBuf;

use super::*;

fn toy(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data/toy")
        .join(name)
}

fn toy_inputs() -> KgInputs {
    KgInputs {
        triples: toy("triples.tsv"),
        vectors: toy("vectors.txt"),
        pos_lexicon: toy("pos_lexicon.tsv"),
    }
}

fn toy_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::load(&toy("toy.conf")).unwrap();
    cfg.finetune.epochs = 2;
    cfg.kge.epochs = 5;
    cfg
}

fn record(id: &str, concepts: &[&str], target: Option<&str>) -> Record {
    Record {
        id: id.into(),
        concepts: concepts.iter().map(|c| c.to_string()).collect(),
        pos: vec!["noun".into(); concepts.len()],
        target: target.map(str::to_string),
        references: Vec::new(),
    }
}

#[test]
fn duplicate_ids_must_share_concepts() {
    let a = record("x", &["dog", "cat"], Some("a"));
    let b = record("x", &["dog", "cat"], Some("b"));
    let c = record("x", &["dog", "ball"], Some("c"));
    assert_eq!(unique_records(&[a.clone(), b]).unwrap().len(), 1);
    assert!(matches!(unique_records(&[a, c]), Err(Error::Data(_))));
    let bad = record("../x", &["dog"], None);
    assert!(matches!(unique_records(&[bad]), Err(Error::Data(_))));
}

#[test]
fn ground_selects_triples_and_trains_tokenizer() {
    let dir = tempfile::tempdir().unwrap();
    let layout = Layout::new(dir.path());
    let summary = ground(&toy_config(), &toy_inputs(), &toy("train.jsonl"), None, &layout).unwrap();
    assert_eq!(summary.records, 20);
    assert!(summary.selected_triples > 0 && summary.selected_triples <= 60);
    let grounded: Vec<GroundedRecord> = read_jsonl(&layout.grounding_file()).unwrap();
    assert_eq!(grounded.len(), 20);
    for g in &grounded {
        assert!(g.entities.iter().all(Option::is_some));
        assert!(g.neighbors.iter().all(|n| n.len() <= 3));
    }
    let tok = Tokenizer::load_dir(&layout.tokenizer_dir()).unwrap();
    assert_eq!(tok.vocab_size(), summary.vocab_size);
}

#[test]
fn strict_grounding_rejects_unknown_concepts() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    let mut rec = record("u", &["dog", "zeppelin", "park"], Some("the dog sees a zeppelin"));
    rec.pos = vec!["noun".into(), "noun".into(), "noun".into()];
    write_jsonl(&data, &[rec]).unwrap();
    let mut cfg = toy_config();
    cfg.strict_grounding = true;
    let out = Layout::new(dir.path().join("out"));
    assert!(matches!(
        ground(&cfg, &toy_inputs(), &data, None, &out),
        Err(Error::Grounding(_))
    ));
    cfg.strict_grounding = false;
    ground(&cfg, &toy_inputs(), &data, None, &out).unwrap();
}

#[test]
fn pos_tags_must_match_concepts() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    let mut rec = record("p", &["dog", "run"], Some("the dog runs"));
    rec.pos.pop();
    write_jsonl(&data, &[rec]).unwrap();
    let out = Layout::new(dir.path().join("out"));
    assert!(matches!(
        ground(&toy_config(), &toy_inputs(), &data, None, &out),
        Err(Error::Config(_))
    ));
}

#[test]
fn missing_bundle_without_kg_inputs_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let layout = Layout::new(dir.path());
    let cfg = toy_config();
    ground(&cfg, &toy_inputs(), &toy("train.jsonl"), None, &layout).unwrap();
    kge_train(&cfg, &toy("triples.tsv"), &layout).unwrap();
    let tables = KgeTables::load_dir(&layout.kge_dir()).unwrap();
    let rec = record("fresh", &["dog", "ball"], None);
    assert!(matches!(
        graphs_for(&rec, &layout, None, &tables, &cfg),
        Err(Error::Usage(_))
    ));
    let res = KgResources::load(&toy_inputs()).unwrap();
    let graphs = graphs_for(&rec, &layout, Some(&res), &tables, &cfg).unwrap();
    assert_eq!(graphs.num_concepts(), 2);
    let bundled = record("toy-00", &["dog", "run", "park"], None);
    assert_eq!(
        graphs_for(&bundled, &layout, None, &tables, &cfg).unwrap(),
        GroundedGraphs::load(&layout.bundle_file("toy-00")).unwrap()
    );
}

#[test]
fn eval_requires_matching_ids() {
    let dir = tempfile::tempdir().unwrap();
    let gens = dir.path().join("g.jsonl");
    let refs = dir.path().join("r.jsonl");
    write_jsonl(
        &gens,
        &[Generation {
            id: "a".into(),
            generation: "the dog runs".into(),
        }],
    )
    .unwrap();
    write_jsonl(
        &refs,
        &[
            record("a", &["dog", "run"], Some("the dog runs")),
            record("a", &["dog", "run"], Some("a dog is running")),
        ],
    )
    .unwrap();
    let report = eval(&gens, &refs).unwrap();
    assert_eq!(report.coverage, 100.0);
    assert_eq!(report.n_examples, 1);

    write_jsonl(&refs, &[record("b", &["dog"], Some("the dog"))]).unwrap();
    match eval(&gens, &refs) {
        Err(Error::Data(msg)) => assert!(msg.contains("\"a\"") && msg.contains("\"b\"")),
        other => panic!("expected a data error, got {other:?}"),
    }
}

#[test]
fn finetune_generate_attention_round() {
    let dir = tempfile::tempdir().unwrap();
    let layout = Layout::new(dir.path());
    let cfg = toy_config();
    ground(&cfg, &toy_inputs(), &toy("train.jsonl"), Some(&toy("val.jsonl")), &layout).unwrap();
    kge_train(&cfg, &toy("triples.tsv"), &layout).unwrap();
    let report = finetune(&cfg, &toy("train.jsonl"), Some(&toy("val.jsonl")), None, &layout).unwrap();
    assert_eq!(report.val_losses.len(), 2);
    let ckpt = layout.checkpoint_dir("finetune");
    let gens = generate(&cfg, &ckpt, &toy("val.jsonl"), None, &layout).unwrap();
    assert_eq!(gens.len(), 4);
    let path = attention(&cfg, &ckpt, &toy("train.jsonl"), "toy-03", None, &layout).unwrap();
    let (labels, matrix) = crate::evaluation::read_attention_csv(&path).unwrap();
    assert_eq!(labels, ["cat", "sit", "chair"]);
    assert_eq!(matrix.shape(), &[3, 3]);
    assert!(matches!(
        attention(&cfg, &ckpt, &toy("train.jsonl"), "nope", None, &layout),
        Err(Error::Data(_))
    ));
}

#[test]
fn pretrain_needs_five_matched_concepts() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    let mut rec = record("s", &["dog", "park"], Some("the dog is in the park"));
    rec.pos = vec!["noun".into(), "noun".into()];
    write_jsonl(&data, &[rec]).unwrap();
    let layout = Layout::new(dir.path().join("out"));
    let cfg = toy_config();
    ground(&cfg, &toy_inputs(), &data, None, &layout).unwrap();
    kge_train(&cfg, &toy("triples.tsv"), &layout).unwrap();
    assert!(matches!(pretrain(&cfg, &layout), Err(Error::Data(_))));
}
