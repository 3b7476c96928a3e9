use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{AttentionKind, Example, Model, Pass};
use crate::numerics::{Graph, ParamStore, Tensor};

/// Head-averaged `k×k` concept attention of the last KG encoder layer.
pub fn concept_attention(model: &Model, store: &ParamStore, ex: &Example) -> Result<Tensor> {
    let layers = model.config().kg_layers;
    if layers == 0 {
        return Err(Error::Config(
            "the model has no KG encoder layers to export attention from".into(),
        ));
    }
    let mut pass = Pass::eval().capturing();
    let mut g = Graph::new();
    model.encode(&mut g, store, &mut pass, &ex.enc_ids, &ex.spans, &ex.graphs)?;
    let heads: Vec<&Tensor> = pass
        .records
        .iter()
        .filter(|r| r.kind == AttentionKind::Mgat && r.layer == layers - 1)
        .map(|r| &r.weights)
        .collect();
    let first = heads
        .first()
        .ok_or_else(|| Error::Grounding("no concept attention was recorded".into()))?;
    let mut data = vec![0.0; first.numel()];
    for h in &heads {
        for (d, v) in data.iter_mut().zip(h.data()) {
            *d += v;
        }
    }
    let n = heads.len() as f64;
    data.iter_mut().for_each(|v| *v /= n);
    Tensor::new(first.shape().to_vec(), data)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Data(format!("{}: {e}", path.display()))
}

/// Writes a labelled square matrix: a header row `concept,<labels…>` and one
/// row per label.
pub fn write_attention_csv(labels: &[String], matrix: &Tensor, path: &Path) -> Result<()> {
    let k = labels.len();
    if matrix.shape() != [k, k] {
        return Err(Error::dim(format!(
            "attention matrix of shape {:?} for {k} labels",
            matrix.shape()
        )));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec!["concept".to_string()];
    header.extend(labels.iter().cloned());
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for (i, label) in labels.iter().enumerate() {
        let mut row = vec![label.clone()];
        row.extend(matrix.row(i).iter().map(f64::to_string));
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_attention_csv(path: &Path) -> Result<(Vec<String>, Tensor)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let labels: Vec<String> = r
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .skip(1)
        .map(str::to_string)
        .collect();
    let mut rows = Vec::with_capacity(labels.len());
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let row = rec
            .iter()
            .skip(1)
            .map(|v| {
                v.parse::<f64>().map_err(|_| Error::Parse {
                    path: path.display().to_string(),
                    line: i + 2,
                    message: format!("invalid weight {v:?}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.len() != labels.len() || rows.iter().any(|r| r.len() != labels.len()) {
        return Err(Error::Data(format!(
            "{} is not a square attention matrix",
            path.display()
        )));
    }
    Ok((labels, Tensor::from_rows(&rows)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{tiny_config, toy_example};

    fn model(kg_layers: usize) -> (Model, ParamStore) {
        let mut store = ParamStore::new();
        let m = Model::new(tiny_config(kg_layers), &mut store, 8).unwrap();
        (m, store)
    }

    #[test]
    fn rows_are_distributions() {
        let (m, s) = model(2);
        let ex = toy_example(&[1, 2, 1], &[1, 0, 1], 3);
        let a = concept_attention(&m, &s, &ex).unwrap();
        assert_eq!(a.shape(), &[3, 3]);
        for i in 0..3 {
            assert!((a.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn single_concept_gives_unit_matrix() {
        let (m, s) = model(1);
        let ex = toy_example(&[2], &[1], 4);
        assert_eq!(concept_attention(&m, &s, &ex).unwrap().data(), &[1.0]);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let (m, s) = model(1);
        let ex = toy_example(&[1, 1, 2], &[0, 1, 1], 5);
        let a = concept_attention(&m, &s, &ex).unwrap();
        let labels = vec!["dog".to_string(), "frisbee".into(), "catch".into()];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("attn.csv");
        write_attention_csv(&labels, &a, &path).unwrap();
        let (l2, a2) = read_attention_csv(&path).unwrap();
        assert_eq!(l2, labels);
        assert_eq!(a2.data(), a.data());
    }

    #[test]
    fn no_kg_layers_is_a_config_error() {
        let (m, s) = model(0);
        let ex = toy_example(&[1, 1], &[0, 0], 6);
        assert!(matches!(concept_attention(&m, &s, &ex), Err(Error::Config(_))));
    }
}
