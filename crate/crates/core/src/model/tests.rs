use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::testutil::{random_tensor, spans_of, tiny_config, toy_example, toy_graphs};
use crate::numerics::{check_gradients, Activation, GradCheckOptions};
use crate::text::BOS;

fn build(config: ModelConfig, seed: u64) -> (Model, ParamStore) {
    let mut store = ParamStore::new();
    let model = Model::new(config, &mut store, seed).unwrap();
    (model, store)
}

fn matvec(w: &Tensor, x: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|r| w.row(r).iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Loop-based reference for one graph-attention block.
fn gat_oracle(
    w: &GraphAttentionWeights,
    queries: &Tensor,
    keys: &Tensor,
    relations: &Tensor,
    slope: f64,
    sigma: Activation,
) -> Vec<Vec<f64>> {
    let dp = w.aq.cols();
    let nk = keys.rows();
    let head_rows = |m: &Tensor, h: usize| -> Tensor {
        Tensor::from_rows(&m.to_rows()[h * dp..(h + 1) * dp]).unwrap()
    };
    (0..queries.rows())
        .map(|i| {
            let mut cat = Vec::new();
            for h in 0..w.heads {
                let (wq, wk, wr, wv) = (
                    head_rows(&w.wq, h),
                    head_rows(&w.wk, h),
                    head_rows(&w.wr, h),
                    head_rows(&w.wv, h),
                );
                let sq = dot(w.aq.row(h), &matvec(&wq, queries.row(i)));
                let z: Vec<f64> = (0..nk)
                    .map(|j| {
                        let sk = dot(w.ak.row(h), &matvec(&wk, keys.row(j)));
                        let sr = dot(w.ar.row(h), &matvec(&wr, relations.row(i * nk + j)));
                        let e = sq + sk + sr;
                        if e > 0.0 {
                            e
                        } else {
                            slope * e
                        }
                    })
                    .collect();
                let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let denom: f64 = z.iter().map(|v| (v - max).exp()).sum();
                let mut agg = vec![0.0; dp];
                for (j, zj) in z.iter().enumerate() {
                    let a = (zj - max).exp() / denom;
                    for (o, v) in agg.iter_mut().zip(matvec(&wv, keys.row(j))) {
                        *o += a * v;
                    }
                }
                cat.extend(agg.into_iter().map(|v| sigma.apply(v)));
            }
            matvec(&w.wo, &cat)
        })
        .collect()
}

fn assert_rows_close(got: &Tensor, want: &[Vec<f64>], tol: f64) {
    assert_eq!(got.rows(), want.len());
    for (i, row) in want.iter().enumerate() {
        for (a, b) in got.row(i).iter().zip(row) {
            assert!((a - b).abs() < tol, "row {i}: {a} vs {b}");
        }
    }
}

#[test]
fn mhgat_inter_matches_loop_oracle() {
    let (model, store) = build(tiny_config(1), 3);
    let graphs = toy_graphs(&[3, 0, 2], 8, 9);
    let mut g = Graph::new();
    let v = g.constant(graphs.concept_vectors.clone());
    let out = model.mhgat_inter(&mut g, &store, &mut Pass::eval(), v, &graphs).unwrap();
    let out = g.value(out).clone();
    let w = model.inter_weights(&store);
    for i in [0, 2] {
        let q = Tensor::from_rows(&[graphs.concept_vectors.row(i).to_vec()]).unwrap();
        let want = gat_oracle(
            &w,
            &q,
            &graphs.neighbor_vectors[i],
            &graphs.neighbor_relations[i],
            0.2,
            Activation::Elu(1.0),
        );
        assert_rows_close(&Tensor::from_rows(&[out.row(i).to_vec()]).unwrap(), &want, 1e-9);
    }
    assert_eq!(out.row(1), graphs.concept_vectors.row(1));
}

#[test]
fn mhgat_intra_matches_loop_oracle() {
    let (model, store) = build(tiny_config(1), 4);
    let graphs = toy_graphs(&[0, 0, 0, 0], 8, 10);
    let mut g = Graph::new();
    let out = model
        .kg_concepts(&mut g, &store, &mut Pass::eval(), &graphs)
        .unwrap();
    let want = gat_oracle(
        &model.intra_weights(&store),
        &graphs.concept_vectors,
        &graphs.concept_vectors,
        &graphs.relation_diffs(),
        0.2,
        Activation::Elu(1.0),
    );
    assert_rows_close(g.value(out), &want, 1e-9);
}

#[test]
fn mgat_matches_loop_oracle_on_concatenated_nodes() {
    let (model, store) = build(tiny_config(1), 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let graphs = toy_graphs(&[0, 0, 0], 8, 11);
    let e_w = random_tensor(&mut rng, &[3, 8]);
    let we = store.get(model.entity_projection(0)).clone();
    let h_rows: Vec<Vec<f64>> = (0..3)
        .map(|i| {
            let mut row = e_w.row(i).to_vec();
            row.extend(matvec(&we, graphs.concept_vectors.row(i)));
            row
        })
        .collect();
    let h = Tensor::from_rows(&h_rows).unwrap();
    let want = gat_oracle(
        &model.mgat_weights(&store, 0),
        &h,
        &h,
        &graphs.relation_diffs(),
        0.2,
        Activation::Elu(1.0),
    );

    let mut g = Graph::new();
    let ew = g.constant(e_w);
    let vr = g.constant(graphs.concept_vectors.clone());
    let wev = g.param(&store, model.entity_projection(0));
    let ent = g.linear(vr, wev, None).unwrap();
    let hv = g.concat_cols(&[ew, ent]).unwrap();
    let rr = g.constant(graphs.relation_diffs());
    let out = model.kg_encoder[0]
        .gat
        .apply(
            &mut g,
            &store,
            &mut Pass::eval(),
            hv,
            hv,
            rr,
            (0.2, Activation::Elu(1.0)),
            AttentionKind::Mgat,
            0,
        )
        .unwrap();
    assert_eq!(g.shape(out), &[3, 8]);
    assert_rows_close(g.value(out), &want, 1e-9);
}

#[test]
fn single_concept_attends_to_itself() {
    let (model, store) = build(tiny_config(1), 7);
    let graphs = toy_graphs(&[0], 8, 12);
    let mut pass = Pass::eval().capturing();
    let mut g = Graph::new();
    model.kg_concepts(&mut g, &store, &mut pass, &graphs).unwrap();
    let intra: Vec<_> = pass
        .records
        .iter()
        .filter(|r| r.kind == AttentionKind::MhgatIntra)
        .collect();
    assert_eq!(intra.len(), 2);
    for r in intra {
        assert_eq!(r.weights.data(), &[1.0]);
    }
}

#[test]
fn zero_score_vectors_give_uniform_attention() {
    let (model, mut store) = build(tiny_config(1), 8);
    for id in model.inter.score_weights() {
        store.get_mut(id).data_mut().fill(0.0);
    }
    let graphs = toy_graphs(&[4], 8, 13);
    let mut pass = Pass::eval().capturing();
    let mut g = Graph::new();
    let v = g.constant(graphs.concept_vectors.clone());
    model.mhgat_inter(&mut g, &store, &mut pass, v, &graphs).unwrap();
    for r in &pass.records {
        for a in r.weights.data() {
            assert!((a - 0.25).abs() < 1e-12);
        }
    }
}

#[test]
fn pretraining_skips_neighbor_attention() {
    let (model, store) = build(tiny_config(1), 9);
    let graphs = toy_graphs(&[2, 1], 8, 14);
    let mut g = Graph::new();
    model
        .kg_concepts(&mut g, &store, &mut Pass::eval().pretraining(true), &graphs)
        .unwrap();
    assert_eq!(model.mhgat_inter_calls(), 0);
    model
        .kg_concepts(&mut g, &store, &mut Pass::eval(), &graphs)
        .unwrap();
    assert_eq!(model.mhgat_inter_calls(), 1);
}

#[test]
fn sci_pads_short_spans_and_pools_long_ones() {
    let (model, store) = build(tiny_config(1), 10);
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let x = random_tensor(&mut rng, &[4, 8]);
    let spans = spans_of(&[1, 3]);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let kernel = g.param(&store, model.kg_encoder[0].kernel);
    let out = model.sci(&mut g, kernel, xv, &spans).unwrap();
    let k = [0.5, 0.5];
    let mut want = vec![x.row(0).iter().map(|v| k[0] * v).collect::<Vec<_>>()];
    let convs: Vec<Vec<f64>> = (1..3)
        .map(|t| {
            x.row(t)
                .iter()
                .zip(x.row(t + 1))
                .map(|(a, b)| k[0] * a + k[1] * b)
                .collect()
        })
        .collect();
    want.push((0..8).map(|c| convs[0][c].max(convs[1][c])).collect());
    assert_rows_close(g.value(out), &want, 1e-12);
}

#[test]
fn csd_restores_span_lengths() {
    let (model, store) = build(tiny_config(1), 11);
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let h = random_tensor(&mut rng, &[3, 8]);
    let spans = spans_of(&[1, 2, 4]);
    let mut g = Graph::new();
    let hv = g.constant(h.clone());
    let kernel = g.param(&store, model.kg_encoder[0].kernel);
    let out = model.csd_deconv(&mut g, kernel, hv, &spans).unwrap();
    assert_eq!(g.shape(out), &[7, 8]);
    let u = g.value(out);
    // single-token span keeps the first deconvolved row: k_0 · h
    for c in 0..8 {
        assert!((u.get2(0, c) - 0.5 * h.get2(0, c)).abs() < 1e-12);
    }
    // interior rows of a 4-token span see both kernel taps
    for c in 0..8 {
        assert!((u.get2(4, c) - h.get2(2, c)).abs() < 1e-12);
        assert!((u.get2(3, c) - 0.5 * h.get2(2, c)).abs() < 1e-12);
    }
}

#[test]
fn sci_hand_case_with_unit_kernel() {
    let (model, mut store) = build(
        ModelConfig {
            d_model: 2,
            d_entity: 2,
            ..tiny_config(1)
        },
        23,
    );
    store.get_mut(model.kg_encoder[0].kernel).data_mut().fill(1.0);
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 1.0], vec![0.0, 5.0]]).unwrap());
    let kernel = g.param(&store, model.kg_encoder[0].kernel);
    let out = model.sci(&mut g, kernel, x, &spans_of(&[3])).unwrap();
    assert_eq!(g.value(out).data(), &[4.0, 6.0]);
}

#[test]
fn csd_hand_case_with_unit_kernel() {
    let (model, mut store) = build(
        ModelConfig {
            d_model: 2,
            d_entity: 2,
            ..tiny_config(1)
        },
        24,
    );
    store.get_mut(model.kg_encoder[0].kernel).data_mut().fill(1.0);
    let mut g = Graph::new();
    let h = g.constant(Tensor::from_rows(&[vec![1.5, -2.0]]).unwrap());
    let kernel = g.param(&store, model.kg_encoder[0].kernel);
    let u = model.csd_deconv(&mut g, kernel, h, &spans_of(&[3])).unwrap();
    assert_eq!(g.value(u).data(), &[1.5, -2.0, 3.0, -4.0, 1.5, -2.0]);
}

#[test]
fn zero_feed_forward_leaves_layer_norm_of_input() {
    let (model, mut store) = build(tiny_config(1), 25);
    for id in model.csd_ffn_params(0) {
        store.get_mut(id).data_mut().fill(0.0);
    }
    let ex = toy_example(&[2, 1, 3], &[0, 1, 2], 27);
    let mut g = Graph::new();
    let mut pass = Pass::eval();
    let x = model.textual_encode(&mut g, &store, &mut pass, &ex.enc_ids).unwrap();
    let v_r = g.constant(ex.graphs.concept_vectors.clone());
    let r_r = g.constant(ex.graphs.relation_diffs());
    let out = model
        .kg_encoder_layer(&mut g, &store, &mut pass, 0, x, &ex.spans, v_r, r_r)
        .unwrap();
    let x = g.value(x).clone();
    for i in 0..x.rows() {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / 8.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
        for (c, v) in row.iter().enumerate() {
            let want = (v - mean) / (var + layers::LN_EPS).sqrt();
            assert!((g.value(out).get2(i, c) - want).abs() < 1e-9);
        }
    }
}

#[test]
fn uniform_logits_give_log_vocab_loss() {
    let (model, mut store) = build(tiny_config(1), 26);
    let out_w = store.id("out.w").unwrap();
    store.get_mut(out_w).data_mut().fill(0.0);
    let ex = toy_example(&[1, 2], &[1, 0], 28);
    let mut g = Graph::new();
    let loss = model
        .forward_loss(&mut g, &store, &mut Pass::eval(), std::slice::from_ref(&ex), 0.1)
        .unwrap();
    assert!((g.value(loss).data()[0] - 20f64.ln()).abs() < 1e-12);
}

#[test]
fn decoder_is_causal() {
    let (model, store) = build(tiny_config(1), 12);
    let ex = toy_example(&[2, 1, 3], &[1, 0, 2], 17);
    let cache = model
        .prepare(&store, &mut Pass::eval(), &ex.enc_ids, &ex.spans, &ex.graphs)
        .unwrap();
    let logits = |ids: &[TokenId]| {
        let mut g = Graph::new();
        let xo = g.constant(cache.xo.clone());
        let c = g.constant(cache.concepts.clone());
        let out = model
            .decode(&mut g, &store, &mut Pass::eval(), xo, c, ids)
            .unwrap();
        g.value(out).clone()
    };
    let a = logits(&[BOS, 7, 8, 9]);
    let b = logits(&[BOS, 7, 15, 16]);
    for t in 0..2 {
        assert_eq!(a.row(t), b.row(t));
    }
    assert_ne!(a.row(2), b.row(2));
}

#[test]
fn next_token_distribution_sums_to_one() {
    let (model, store) = build(tiny_config(2), 13);
    let ex = toy_example(&[1, 2, 1, 1], &[2, 2, 0, 1], 18);
    let cache = model
        .prepare(&store, &mut Pass::eval(), &ex.enc_ids, &ex.spans, &ex.graphs)
        .unwrap();
    for prefix in [&[BOS][..], &[BOS, 6, 7]] {
        let lp = model.next_log_probs(&store, &cache, prefix).unwrap();
        assert_eq!(lp.len(), 20);
        let total: f64 = lp.iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}

#[test]
fn zero_mixing_weights_make_kg_blocks_residual() {
    let (model, mut store) = build(tiny_config(1), 14);
    for id in model.dual_mix_params() {
        store.get_mut(id).data_mut().fill(0.0);
    }
    let ex = toy_example(&[2, 2], &[1, 1], 19);
    let logits = |store: &ParamStore| {
        let mut g = Graph::new();
        let mut pass = Pass::eval();
        let xo = model.encode(&mut g, store, &mut pass, &ex.enc_ids, &ex.spans, &ex.graphs).unwrap();
        let c = model.kg_concepts(&mut g, store, &mut pass, &ex.graphs).unwrap();
        let out = model.decode(&mut g, store, &mut pass, xo, c, &ex.target).unwrap();
        g.value(out).clone()
    };
    let before = logits(&store);
    let mut perturbed = store.clone();
    for name in ["kgdec.wkv", "kgdec.0.kg.q.w", "kgdec.0.text.v.w", "kgdec.inter.wo"] {
        perturbed.by_name_mut(name).unwrap().data_mut()[0] += 0.7;
    }
    assert_eq!(before.data(), logits(&perturbed).data());
}

#[test]
fn without_kg_layers_encoder_is_textual() {
    let (model, store) = build(tiny_config(0), 15);
    let ex = toy_example(&[2, 3], &[1, 1], 20);
    let mut g = Graph::new();
    let full = model
        .encode(&mut g, &store, &mut Pass::eval(), &ex.enc_ids, &ex.spans, &ex.graphs)
        .unwrap();
    let text = model
        .textual_encode(&mut g, &store, &mut Pass::eval(), &ex.enc_ids)
        .unwrap();
    assert_eq!(g.value(full).data(), g.value(text).data());
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let (model, mut store) = build(tiny_config(1), 16);
    let batch = vec![toy_example(&[2, 1, 2], &[2, 0, 1], 21), toy_example(&[1, 3], &[1, 2], 22)];
    let report = check_gradients(
        &mut store,
        |g, s| model.forward_loss(g, s, &mut Pass::eval(), &batch, 0.1),
        &GradCheckOptions {
            max_coords_per_param: Some(6),
            ..GradCheckOptions::default()
        },
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn mismatched_relation_rows_are_grounding_errors() {
    let (model, store) = build(tiny_config(1), 17);
    let mut graphs = toy_graphs(&[2], 8, 23);
    graphs.neighbor_relations[0] = Tensor::zeros(&[3, 8]);
    let mut g = Graph::new();
    let v = g.constant(graphs.concept_vectors.clone());
    let err = model.mhgat_inter(&mut g, &store, &mut Pass::eval(), v, &graphs);
    assert!(matches!(err, Err(Error::Grounding(_))));
}

#[test]
fn padding_only_target_is_rejected() {
    let (model, store) = build(tiny_config(1), 18);
    let mut ex = toy_example(&[1, 1], &[0, 0], 24);
    ex.target = vec![BOS, PAD, PAD];
    let mut g = Graph::new();
    let err = model.example_loss(&mut g, &store, &mut Pass::eval(), &ex, 0.1);
    assert!(matches!(err, Err(Error::Data(_))));
}

#[test]
fn checkpoint_round_trip() {
    let (model, store) = build(tiny_config(1), 19);
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(dir.path(), &model, &store).unwrap();
    let (loaded, loaded_store) = load_checkpoint(dir.path()).unwrap();
    assert_eq!(loaded.config(), model.config());
    for id in store.ids() {
        assert_eq!(store.get(id).data(), loaded_store.get(id).data());
    }
}

#[test]
fn dropout_is_reproducible_per_seed() {
    let config = ModelConfig {
        dropout: 0.3,
        ..tiny_config(1)
    };
    let (model, store) = build(config, 20);
    let ex = toy_example(&[2, 2], &[1, 1], 25);
    let loss = |seed| {
        let mut g = Graph::new();
        let l = model
            .forward_loss(&mut g, &store, &mut Pass::train(0.3, seed), std::slice::from_ref(&ex), 0.1)
            .unwrap();
        g.value(l).data()[0]
    };
    assert_eq!(loss(1), loss(1));
    assert_ne!(loss(1), loss(2));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn neighbor_order_does_not_matter(seed in 0u64..1000, n in 1usize..5) {
        let (model, store) = build(tiny_config(1), 21);
        let graphs = toy_graphs(&[n], 8, seed);
        let mut shuffled = graphs.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let mut order: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let pick = |t: &Tensor| Tensor::from_rows(
            &order.iter().map(|&r| t.row(r).to_vec()).collect::<Vec<_>>()).unwrap();
        shuffled.neighbor_vectors[0] = pick(&graphs.neighbor_vectors[0]);
        shuffled.neighbor_relations[0] = pick(&graphs.neighbor_relations[0]);
        let run = |gr: &GroundedGraphs| {
            let mut g = Graph::new();
            let v = g.constant(gr.concept_vectors.clone());
            let out = model.mhgat_inter(&mut g, &store, &mut Pass::eval(), v, gr).unwrap();
            g.value(out).clone()
        };
        prop_assert!(run(&graphs).max_abs_diff(&run(&shuffled)) < 1e-12);
    }

    #[test]
    fn encoder_output_shape_follows_tokens(widths in proptest::collection::vec(1usize..4, 1..5)) {
        let (model, store) = build(tiny_config(1), 22);
        let counts: Vec<usize> = widths.iter().map(|w| w % 2).collect();
        let ex = toy_example(&widths, &counts, 26);
        let mut g = Graph::new();
        let xo = model.encode(&mut g, &store, &mut Pass::eval(), &ex.enc_ids, &ex.spans, &ex.graphs).unwrap();
        prop_assert_eq!(g.shape(xo), &[widths.iter().sum::<usize>(), 8][..]);
    }
}
