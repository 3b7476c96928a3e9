use super::*;
use crate::model::ModelConfig;
use crate::testutil::{tiny_config, toy_example};

fn corpus(n: usize) -> Vec<Example> {
    (0..n)
        .map(|i| toy_example(&[1 + i % 2, 2, 1], &[i % 3, 1, 0], 100 + i as u64))
        .collect()
}

fn fresh(config: ModelConfig) -> (Model, ParamStore) {
    let mut store = ParamStore::new();
    let model = Model::new(config, &mut store, 5).unwrap();
    (model, store)
}

fn quick(batch_size: usize, accumulation: usize) -> TrainConfig {
    TrainConfig {
        lr: 1e-2,
        warmup: 0.0,
        batch_size,
        accumulation,
        epochs: 1,
        ..TrainConfig::default()
    }
}

#[test]
fn accumulation_matches_one_large_batch() {
    let data = corpus(8);
    let run = |cfg: TrainConfig| {
        let (model, mut store) = fresh(tiny_config(1));
        run_training(&model, &mut store, &data, &[], &cfg).unwrap();
        store
    };
    let big = run(quick(4, 1));
    for (b, a) in [(2, 2), (1, 4)] {
        let acc = run(quick(b, a));
        for id in big.ids() {
            let diff = big.get(id).max_abs_diff(acc.get(id));
            assert!(diff < 1e-8, "{} differs by {diff}", big.name(id));
        }
    }
}

#[test]
fn same_seed_gives_identical_traces() {
    let data = corpus(6);
    let config = ModelConfig {
        dropout: 0.1,
        ..tiny_config(1)
    };
    let cfg = TrainConfig {
        epochs: 3,
        ..quick(2, 1)
    };
    let run = || {
        let (model, mut store) = fresh(config.clone());
        let report = run_training(&model, &mut store, &data, &data[..2], &cfg).unwrap();
        (report.trace, store)
    };
    let (t1, s1) = run();
    let (t2, s2) = run();
    assert_eq!(t1, t2);
    for id in s1.ids() {
        assert_eq!(s1.get(id).data(), s2.get(id).data());
    }
}

#[test]
fn pretraining_never_touches_neighbor_attention() {
    let data = corpus(4);
    let (model, mut store) = fresh(tiny_config(1));
    let cfg = TrainConfig {
        mode: Mode::Pretrain,
        epochs: 2,
        ..quick(2, 1)
    };
    run_training(&model, &mut store, &data, &data[..1], &cfg).unwrap();
    assert_eq!(model.mhgat_inter_calls(), 0);
    run_training(&model, &mut store, &data, &[], &quick(2, 1)).unwrap();
    assert!(model.mhgat_inter_calls() > 0);
}

#[test]
fn loss_falls_on_a_tiny_corpus() {
    let data = corpus(4);
    let (model, mut store) = fresh(tiny_config(1));
    let cfg = TrainConfig {
        epochs: 30,
        label_smoothing: 0.0,
        ..quick(4, 1)
    };
    let report = run_training(&model, &mut store, &data, &[], &cfg).unwrap();
    assert!(report.epoch_losses.iter().all(|l| l.is_finite()));
    assert!(report.epoch_losses[29] < 0.5 * report.epoch_losses[0]);
}

#[test]
fn best_validation_epoch_is_kept() {
    let data = corpus(4);
    let (model, mut store) = fresh(tiny_config(1));
    let cfg = TrainConfig {
        epochs: 4,
        ..quick(2, 1)
    };
    let report = run_training(&model, &mut store, &data, &data[2..], &cfg).unwrap();
    assert_eq!(report.val_losses.len(), 4);
    let argmin = report
        .val_losses
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .unwrap()
        .0;
    assert_eq!(report.best_epoch, argmin);
    let val = evaluate_loss(&model, &report.best, &data[2..], &cfg).unwrap();
    assert_eq!(val, report.val_losses[argmin]);
    assert_eq!(report.trace.iter().filter(|r| r.val_loss.is_some()).count(), 4);
}

#[test]
fn empty_training_set_is_a_data_error() {
    let (model, mut store) = fresh(tiny_config(1));
    let err = run_training(&model, &mut store, &[], &[], &quick(2, 1));
    assert!(matches!(err, Err(Error::Data(_))));
}

#[test]
fn invalid_configs_are_rejected() {
    for cfg in [
        TrainConfig { warmup: 1.5, ..TrainConfig::default() },
        TrainConfig { accumulation: 0, ..TrainConfig::default() },
    ] {
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
    assert!("sideways".parse::<Mode>().is_err());
    assert_eq!("pretrain".parse::<Mode>().unwrap(), Mode::Pretrain);
}

#[test]
fn trace_csv_has_header_and_rows() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    let rows = vec![
        TraceRow { step: 1, lr: 0.5, loss: 2.25, val_loss: None },
        TraceRow { step: 2, lr: 0.25, loss: 1.5, val_loss: Some(1.75) },
    ];
    write_trace_csv(&rows, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text, "step,lr,loss,val_loss\n1,0.5,2.25,\n2,0.25,1.5,1.75\n");
}
