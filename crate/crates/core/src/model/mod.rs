//! Transformer encoder-decoder with knowledge-graph augmented layers.
//!
//! The encoder runs `N` textual layers, then `M` KG layers that pool
//! subwords into concepts (convolution + max), let concepts attend to each
//! other over the reasoning graph, and spread the result back onto subwords
//! (transposed convolution + feed-forward + layer norm). The decoder runs
//! `N` causal textual layers, refines concept vectors with hierarchical
//! graph attention (neighbors, then other concepts) and mixes attention
//! over concepts and encoder tokens in `M` further blocks.

mod checkpoint;
mod config;
mod layers;

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{load_checkpoint, save_checkpoint, MANIFEST_FILE, PARAMS_DIR};
pub use config::ModelConfig;
pub use layers::GraphAttentionWeights;

use crate::error::{Error, Result};
use crate::kg::GroundedGraphs;
use crate::numerics::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::text::{spans_partition, ConceptSpan, TokenId, PAD};
use layers::{dropout, Attention, FeedForward, GraphAttention, Init, LayerNorm, Linear};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionKind {
    EncoderSelf,
    DecoderSelf,
    DecoderCross,
    Mgat,
    MhgatInter,
    MhgatIntra,
    KgDual,
    TextDual,
}

/// One attention matrix (rows are queries) captured during a forward pass.
#[derive(Debug, Clone)]
pub struct AttentionRecord {
    pub kind: AttentionKind,
    pub layer: usize,
    pub head: usize,
    pub weights: Tensor,
}

/// Per-forward switches: pre-training mode, dropout and attention capture.
#[derive(Debug)]
pub struct Pass {
    pub pretrain: bool,
    dropout: Option<(f64, ChaCha8Rng)>,
    capture: bool,
    pub records: Vec<AttentionRecord>,
}

impl Pass {
    /// Deterministic pass without dropout.
    pub fn eval() -> Self {
        Pass {
            pretrain: false,
            dropout: None,
            capture: false,
            records: Vec::new(),
        }
    }

    pub fn train(rate: f64, seed: u64) -> Self {
        Pass {
            dropout: Some((rate, ChaCha8Rng::seed_from_u64(seed))),
            ..Pass::eval()
        }
    }

    pub fn pretraining(mut self, on: bool) -> Self {
        self.pretrain = on;
        self
    }

    pub fn capturing(mut self) -> Self {
        self.capture = true;
        self
    }

    fn record(&mut self, g: &Graph, kind: AttentionKind, layer: usize, head: usize, alpha: Var) {
        if self.capture {
            self.records.push(AttentionRecord {
                kind,
                layer,
                head,
                weights: g.value(alpha).clone(),
            });
        }
    }
}

struct EncoderLayer {
    ln1: LayerNorm,
    attn: Attention,
    ln2: LayerNorm,
    ffn: FeedForward,
}

struct DecoderLayer {
    ln1: LayerNorm,
    self_attn: Attention,
    ln2: LayerNorm,
    cross_attn: Attention,
    ln3: LayerNorm,
    ffn: FeedForward,
}

struct KgEncoderLayer {
    kernel: ParamId,
    we: ParamId,
    gat: GraphAttention,
    ffn: FeedForward,
    ln: LayerNorm,
}

struct KgDecoderBlock {
    kg_attn: Attention,
    text_attn: Attention,
    w_att: ParamId,
}

/// Model structure; parameter values live in a separate [`ParamStore`] so
/// gradient checks and optimizers can drive them directly.
pub struct Model {
    config: ModelConfig,
    token_emb: ParamId,
    enc_pos: ParamId,
    dec_pos: ParamId,
    encoder: Vec<EncoderLayer>,
    enc_ln: LayerNorm,
    kg_encoder: Vec<KgEncoderLayer>,
    decoder: Vec<DecoderLayer>,
    dec_ln: LayerNorm,
    inter: GraphAttention,
    intra: GraphAttention,
    w_kv: ParamId,
    kg_decoder: Vec<KgDecoderBlock>,
    out: Linear,
    inter_calls: AtomicUsize,
}

/// Encoder-side tensors reused across decoding steps.
#[derive(Debug, Clone)]
pub struct EncoderCache {
    pub xo: Tensor,
    pub concepts: Tensor,
}

/// One training or evaluation instance.
#[derive(Debug, Clone)]
pub struct Example {
    pub enc_ids: Vec<TokenId>,
    pub spans: Vec<ConceptSpan>,
    pub graphs: GroundedGraphs,
    /// `BOS … EOS`; `PAD` positions are ignored by the loss.
    pub target: Vec<TokenId>,
}

impl Model {
    /// Registers freshly initialized parameters in `store`.
    pub fn new(config: ModelConfig, store: &mut ParamStore, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let (d, de, dh, k) = (c.d_model, c.d_entity, c.d_hidden(), c.heads);
        let mut init = Init {
            store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let token_emb = init.embedding("embed.tokens".into(), &[c.vocab_size, d]);
        let enc_pos = init.embedding("embed.enc_pos".into(), &[c.max_enc_len, d]);
        let dec_pos = init.embedding("embed.dec_pos".into(), &[c.max_dec_len, d]);
        let encoder = (0..c.text_layers)
            .map(|i| {
                let p = format!("enc.{i}");
                EncoderLayer {
                    ln1: LayerNorm::new(&mut init, &format!("{p}.ln1"), d),
                    attn: Attention::new(&mut init, &format!("{p}.attn"), d, k),
                    ln2: LayerNorm::new(&mut init, &format!("{p}.ln2"), d),
                    ffn: FeedForward::new(&mut init, &format!("{p}.ffn"), d, c.d_ff, true),
                }
            })
            .collect();
        let enc_ln = LayerNorm::new(&mut init, "enc.ln", d);
        let kg_encoder = (0..c.kg_layers)
            .map(|i| {
                let p = format!("kgenc.{i}");
                KgEncoderLayer {
                    kernel: init.full(
                        format!("{p}.kernel"),
                        &[c.kernel_size],
                        1.0 / c.kernel_size as f64,
                    ),
                    we: init.normal(format!("{p}.we"), &[d, de]),
                    gat: GraphAttention::new(&mut init, &format!("{p}.mgat"), dh, de, d, k),
                    ffn: FeedForward::new(&mut init, &format!("{p}.ffn"), d, c.d_ff, false),
                    ln: LayerNorm::new(&mut init, &format!("{p}.ln"), d),
                }
            })
            .collect();
        let decoder = (0..c.text_layers)
            .map(|i| {
                let p = format!("dec.{i}");
                DecoderLayer {
                    ln1: LayerNorm::new(&mut init, &format!("{p}.ln1"), d),
                    self_attn: Attention::new(&mut init, &format!("{p}.self"), d, k),
                    ln2: LayerNorm::new(&mut init, &format!("{p}.ln2"), d),
                    cross_attn: Attention::new(&mut init, &format!("{p}.cross"), d, k),
                    ln3: LayerNorm::new(&mut init, &format!("{p}.ln3"), d),
                    ffn: FeedForward::new(&mut init, &format!("{p}.ffn"), d, c.d_ff, true),
                }
            })
            .collect();
        let dec_ln = LayerNorm::new(&mut init, "dec.ln", d);
        let inter = GraphAttention::new(&mut init, "kgdec.inter", de, de, de, k);
        let intra = GraphAttention::new(&mut init, "kgdec.intra", de, de, de, k);
        let w_kv = init.normal("kgdec.wkv".into(), &[d, de]);
        let kg_decoder = (0..c.kg_layers)
            .map(|i| {
                let p = format!("kgdec.{i}");
                KgDecoderBlock {
                    kg_attn: Attention::new(&mut init, &format!("{p}.kg"), d, k),
                    text_attn: Attention::new(&mut init, &format!("{p}.text"), d, k),
                    w_att: init.normal(format!("{p}.watt"), &[d, 2 * d]),
                }
            })
            .collect();
        let out = Linear::new(&mut init, "out", c.vocab_size, d, true);
        Ok(Model {
            config,
            token_emb,
            enc_pos,
            dec_pos,
            encoder,
            enc_ln,
            kg_encoder,
            decoder,
            dec_ln,
            inter,
            intra,
            w_kv,
            kg_decoder,
            out,
            inter_calls: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Number of neighbor-attention evaluations since construction.
    pub fn mhgat_inter_calls(&self) -> usize {
        self.inter_calls.load(Ordering::Relaxed)
    }

    fn gat_act(&self) -> (f64, crate::numerics::Activation) {
        (self.config.leaky_slope, self.config.gat_activation)
    }

    /// Textual encoder over `ids` (no BOS/EOS), `n×d_model`.
    pub fn textual_encode(
        &self,
        g: &mut Graph,
        s: &ParamStore,
        pass: &mut Pass,
        ids: &[TokenId],
    ) -> Result<Var> {
        let n = ids.len();
        if n == 0 || n > self.config.max_enc_len {
            return Err(Error::dim(format!(
                "encoder input length {n} outside 1..={}",
                self.config.max_enc_len
            )));
        }
        let x = self.embed(g, s, pass, ids, self.enc_pos)?;
        let mut x = x;
        for (i, layer) in self.encoder.iter().enumerate() {
            let h = layer.ln1.apply(g, s, x)?;
            let a = layer
                .attn
                .apply(g, s, pass, h, h, false, AttentionKind::EncoderSelf, i)?;
            let a = dropout(g, pass, a)?;
            x = g.add(x, a)?;
            let h = layer.ln2.apply(g, s, x)?;
            let f = layer.ffn.apply(g, s, h)?;
            let f = dropout(g, pass, f)?;
            x = g.add(x, f)?;
        }
        self.enc_ln.apply(g, s, x)
    }

    fn embed(
        &self,
        g: &mut Graph,
        s: &ParamStore,
        pass: &mut Pass,
        ids: &[TokenId],
        pos: ParamId,
    ) -> Result<Var> {
        let table = g.param(s, self.token_emb);
        let tok = g.gather_rows(table, ids)?;
        let pos = g.param(s, pos);
        let pos = g.slice_rows(pos, 0, ids.len())?;
        let x = g.add(tok, pos)?;
        dropout(g, pass, x)
    }

    /// Conv + max-pool of each concept's subwords into `k×d_model`.
    fn sci(
        &self,
        g: &mut Graph,
        kernel: Var,
        x: Var,
        spans: &[ConceptSpan],
    ) -> Result<Var> {
        let l = self.config.kernel_size;
        let d = self.config.d_model;
        let mut rows = Vec::with_capacity(spans.len());
        for sp in spans {
            if sp.end <= sp.start {
                return Err(Error::Alignment(format!("empty span for concept {}", sp.concept)));
            }
            let mut seg = g.slice_rows(x, sp.start, sp.width())?;
            if sp.width() < l {
                let pad = g.constant(Tensor::zeros(&[l - sp.width(), d]));
                seg = g.concat_rows(&[seg, pad])?;
            }
            let conv = g.conv1d_depthwise(seg, kernel)?;
            rows.push(g.max_rows(conv)?);
        }
        g.concat_rows(&rows)
    }

    /// Spreads concept rows back over their subwords with the transposed
    /// convolution, `n×d_model`.
    fn csd_deconv(
        &self,
        g: &mut Graph,
        kernel: Var,
        h: Var,
        spans: &[ConceptSpan],
    ) -> Result<Var> {
        let l = self.config.kernel_size;
        let mut parts = Vec::with_capacity(spans.len());
        for (i, sp) in spans.iter().enumerate() {
            let m = sp.width().max(l);
            let row = g.slice_rows(h, i, 1)?;
            let rep = g.repeat_rows(row, m - l + 1)?;
            let u = g.deconv1d_depthwise(rep, kernel)?;
            let u = if m > sp.width() {
                g.slice_rows(u, 0, sp.width())?
            } else {
                u
            };
            parts.push(u);
        }
        g.concat_rows(&parts)
    }

    /// Graph attention of KG encoder layer `index` over nodes
    /// `[e_w; W_e v_r]`, `k×d_model`.
    #[allow(clippy::too_many_arguments)]
    pub fn mgat(
        &self,
        g: &mut Graph,
        s: &ParamStore,
        pass: &mut Pass,
        index: usize,
        e_w: Var,
        v_r: Var,
        r_r: Var,
    ) -> Result<Var> {
        let layer = self.kg_encoder.get(index).ok_or_else(|| {
            Error::Config(format!("model has {} KG encoder layers", self.kg_encoder.len()))
        })?;
        let we = g.param(s, layer.we);
        let ent = g.linear(v_r, we, None)?;
        let h = g.concat_cols(&[e_w, ent])?;
        layer.gat.apply(
            g,
            s,
            pass,
            h,
            h,
            r_r,
            self.gat_act(),
            AttentionKind::Mgat,
            index,
        )
    }

    fn kg_encoder_layer(
        &self,
        g: &mut Graph,
        s: &ParamStore,
        pass: &mut Pass,
        index: usize,
        x: Var,
        spans: &[ConceptSpan],
        v_r: Var,
        r_r: Var,
    ) -> Result<Var> {
        let layer = &self.kg_encoder[index];
        let kernel = g.param(s, layer.kernel);
        let e_w = self.sci(g, kernel, x, spans)?;
        let h1 = self.mgat(g, s, pass, index, e_w, v_r, r_r)?;
        let u = self.csd_deconv(g, kernel, h1, spans)?;
        let ux = g.add(u, x)?;
        let p = layer.ffn.apply(g, s, ux)?;
        let px = g.add(p, x)?;
        layer.ln.apply(g, s, px)
    }

    /// Full encoder: textual layers then KG layers, `n×d_model`.
    pub fn encode(
        &self,
        g: &mut Graph,
        s: &ParamStore,
        pass: &mut Pass,
        ids: &[TokenId],
        spans: &[ConceptSpan],
        graphs: &GroundedGraphs,
    ) -> Result<Var> {
        self.check_graphs(spans, ids.len(), graphs)?;
        let mut x = self.textual_encode(g, s, pass, ids)?;
        if self.kg_encoder.is_empty() {
            return Ok(x);
        }
        let v_r = g.constant(graphs.concept_vectors.clone());
        let r_r = g.constant(graphs.relation_diffs());
        for i in 0..self.kg_encoder.len() {
            x = self.kg_encoder_layer(g, s, pass, i, x, spans, v_r, r_r)?;
        }
        Ok(x)
    }

    fn check_graphs(&self, spans: &[ConceptSpan], n: usize, graphs: &GroundedGraphs) -> Result<()> {
        if !spans_partition(spans, n) {
            return Err(Error::Alignment(format!(
                "concept spans do not partition the {n} encoder tokens"
            )));
        }
        if spans.len() != graphs.num_concepts() {
            return Err(Error::dim(format!(
                "{} concept spans but {} grounded concepts",
                spans.len(),
                graphs.num_concepts()
            )));
        }
        if graphs.dim() != self.config.d_entity {
            return Err(Error::dim(format!(
                "entity vectors have {} dimensions, model expects {}",
                graphs.dim(),
                self.config.d_entity
            )));
        }
        Ok(())
    }

    /// Updates concept vectors through their neighbors (skipped in
    /// pre-training) and then through the other concepts, `k×d_entity`.
    pub fn kg_concepts(
        &self,
        g: &mut Graph,
        s: &ParamStore,
        pass: &mut Pass,
        graphs: &GroundedGraphs,
    ) -> Result<Var> {
        let v = g.constant(graphs.concept_vectors.clone());
        let v1 = if pass.pretrain {
            v
        } else {
            self.mhgat_inter(g, s, pass, v, graphs)?
        };
        let r_r = g.constant(graphs.relation_diffs());
        self.intra.apply(
            g,
            s,
            pass,
            v1,
            v1,
            r_r,
            self.gat_act(),
            AttentionKind::MhgatIntra,
            0,
        )
    }

    /// Concept update from neighbor nodes; concepts without neighbors keep
    /// their vector.
    pub fn mhgat_inter(
        &self,
        g: &mut Graph,
        s: &ParamStore,
        pass: &mut Pass,
        v: Var,
        graphs: &GroundedGraphs,
    ) -> Result<Var> {
        self.inter_calls.fetch_add(1, Ordering::Relaxed);
        let k = graphs.num_concepts();
        let mut rows = Vec::with_capacity(k);
        for i in 0..k {
            let vi = g.slice_rows(v, i, 1)?;
            if graphs.neighbors[i].is_empty() {
                rows.push(vi);
                continue;
            }
            let keys = g.constant(graphs.neighbor_vectors[i].clone());
            let rels = g.constant(graphs.neighbor_relations[i].clone());
            rows.push(self.inter.apply(
                g,
                s,
                pass,
                vi,
                keys,
                rels,
                self.gat_act(),
                AttentionKind::MhgatInter,
                i,
            )?);
        }
        g.concat_rows(&rows)
    }

    /// Decoder logits `t×V` for decoder inputs `ids` (starting with BOS).
    pub fn decode(
        &self,
        g: &mut Graph,
        s: &ParamStore,
        pass: &mut Pass,
        xo: Var,
        concepts: Var,
        ids: &[TokenId],
    ) -> Result<Var> {
        let t = ids.len();
        if t == 0 || t > self.config.max_dec_len {
            return Err(Error::dim(format!(
                "decoder input length {t} outside 1..={}",
                self.config.max_dec_len
            )));
        }
        let mut y = self.embed(g, s, pass, ids, self.dec_pos)?;
        for (i, layer) in self.decoder.iter().enumerate() {
            let h = layer.ln1.apply(g, s, y)?;
            let a = layer
                .self_attn
                .apply(g, s, pass, h, h, true, AttentionKind::DecoderSelf, i)?;
            let a = dropout(g, pass, a)?;
            y = g.add(y, a)?;
            let h = layer.ln2.apply(g, s, y)?;
            let a = layer
                .cross_attn
                .apply(g, s, pass, h, xo, false, AttentionKind::DecoderCross, i)?;
            let a = dropout(g, pass, a)?;
            y = g.add(y, a)?;
            let h = layer.ln3.apply(g, s, y)?;
            let f = layer.ffn.apply(g, s, h)?;
            let f = dropout(g, pass, f)?;
            y = g.add(y, f)?;
        }
        y = self.dec_ln.apply(g, s, y)?;
        if !self.kg_decoder.is_empty() {
            let w_kv = g.param(s, self.w_kv);
            let kv = g.linear(concepts, w_kv, None)?;
            for (i, block) in self.kg_decoder.iter().enumerate() {
                let at_kg = block
                    .kg_attn
                    .apply(g, s, pass, y, kv, false, AttentionKind::KgDual, i)?;
                let at_tx = block
                    .text_attn
                    .apply(g, s, pass, y, xo, false, AttentionKind::TextDual, i)?;
                let cat = g.concat_cols(&[at_kg, at_tx])?;
                let w_att = g.param(s, block.w_att);
                let mixed = g.linear(cat, w_att, None)?;
                y = g.add(mixed, y)?;
            }
        }
        self.out.apply(g, s, y)
    }

    /// Summed label-smoothed cross-entropy over the non-pad target tokens
    /// of one example, and the number of those tokens.
    pub fn example_loss(
        &self,
        g: &mut Graph,
        s: &ParamStore,
        pass: &mut Pass,
        ex: &Example,
        smoothing: f64,
    ) -> Result<(Var, usize)> {
        if ex.target.len() < 2 {
            return Err(Error::Data("target needs at least BOS and one token".into()));
        }
        let labels: Vec<Option<usize>> = ex.target[1..]
            .iter()
            .map(|&t| (t != PAD).then_some(t))
            .collect();
        let tokens = labels.iter().flatten().count();
        if tokens == 0 {
            return Err(Error::Data("target consists only of padding".into()));
        }
        let inputs = &ex.target[..ex.target.len() - 1];
        let xo = self.encode(g, s, pass, &ex.enc_ids, &ex.spans, &ex.graphs)?;
        let concepts = self.kg_concepts(g, s, pass, &ex.graphs)?;
        let logits = self.decode(g, s, pass, xo, concepts, inputs)?;
        let loss = g.smoothed_cross_entropy(logits, &labels, smoothing)?;
        Ok((loss, tokens))
    }

    /// Mean per-token loss over a batch, as a scalar node.
    pub fn forward_loss(
        &self,
        g: &mut Graph,
        s: &ParamStore,
        pass: &mut Pass,
        batch: &[Example],
        smoothing: f64,
    ) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let mut total = None;
        let mut tokens = 0;
        for ex in batch {
            let (l, n) = self.example_loss(g, s, pass, ex, smoothing)?;
            tokens += n;
            total = Some(match total {
                None => l,
                Some(t) => g.add(t, l)?,
            });
        }
        let total = total.expect("batch is non-empty");
        Ok(g.scale(total, 1.0 / tokens as f64))
    }

    /// Runs the encoder side once for decoding.
    pub fn prepare(
        &self,
        s: &ParamStore,
        pass: &mut Pass,
        ids: &[TokenId],
        spans: &[ConceptSpan],
        graphs: &GroundedGraphs,
    ) -> Result<EncoderCache> {
        let mut g = Graph::new();
        let xo = self.encode(&mut g, s, pass, ids, spans, graphs)?;
        let concepts = self.kg_concepts(&mut g, s, pass, graphs)?;
        Ok(EncoderCache {
            xo: g.value(xo).clone(),
            concepts: g.value(concepts).clone(),
        })
    }

    /// Log-probabilities of the next token after `prefix`.
    pub fn next_log_probs(
        &self,
        s: &ParamStore,
        cache: &EncoderCache,
        prefix: &[TokenId],
    ) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let xo = g.constant(cache.xo.clone());
        let concepts = g.constant(cache.concepts.clone());
        let logits = self.decode(&mut g, s, &mut Pass::eval(), xo, concepts, prefix)?;
        let row = g.value(logits).row(prefix.len() - 1);
        Ok(log_softmax(row))
    }

    /// Raw MGAT weights of KG encoder layer `index`.
    pub fn mgat_weights(&self, s: &ParamStore, index: usize) -> GraphAttentionWeights {
        self.kg_encoder[index].gat.weights(s)
    }

    pub fn inter_weights(&self, s: &ParamStore) -> GraphAttentionWeights {
        self.inter.weights(s)
    }

    pub fn intra_weights(&self, s: &ParamStore) -> GraphAttentionWeights {
        self.intra.weights(s)
    }

    /// `W_e` of KG encoder layer `index` (`d_model×d_entity`).
    pub fn entity_projection(&self, index: usize) -> ParamId {
        self.kg_encoder[index].we
    }

    pub fn mgat_score_params(&self, index: usize) -> [ParamId; 3] {
        self.kg_encoder[index].gat.score_weights()
    }

    pub fn csd_ffn_params(&self, index: usize) -> [ParamId; 2] {
        self.kg_encoder[index].ffn.weights()
    }

    pub fn dual_mix_params(&self) -> Vec<ParamId> {
        self.kg_decoder.iter().map(|b| b.w_att).collect()
    }
}

/// Numerically stable `log softmax` of one row.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

#[cfg(test)]
mod tests;
