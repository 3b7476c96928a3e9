//! Parameter groups and the forward computations built from them.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{AttentionKind, Pass};
use crate::error::{Error, Result};
use crate::numerics::{Activation, Graph, ParamId, ParamStore, Tensor, Var};

pub(crate) const LN_EPS: f64 = 1e-5;

pub(crate) struct Init<'a> {
    pub store: &'a mut ParamStore,
    pub rng: ChaCha8Rng,
}

impl Init<'_> {
    /// Glorot-normal: std `√(2 / (fan_in + fan_out))` over the last two
    /// dimensions.
    pub fn normal(&mut self, name: String, shape: &[usize]) -> ParamId {
        let fans: usize = shape.iter().rev().take(2).sum();
        self.sample(name, shape, (2.0 / fans as f64).sqrt())
    }

    /// Embedding rows with std `1/√d`.
    pub fn embedding(&mut self, name: String, shape: &[usize]) -> ParamId {
        let d = *shape.last().expect("embedding has a width");
        self.sample(name, shape, 1.0 / (d as f64).sqrt())
    }

    fn sample(&mut self, name: String, shape: &[usize], std: f64) -> ParamId {
        let normal = Normal::new(0.0, std).expect("valid std");
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| normal.sample(&mut self.rng)).collect();
        self.store
            .add(name, Tensor::new(shape.to_vec(), data).expect("shape matches data"))
    }

    pub fn full(&mut self, name: String, shape: &[usize], value: f64) -> ParamId {
        self.store.add_full(name, shape, value)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Linear {
    w: ParamId,
    b: Option<ParamId>,
}

impl Linear {
    pub fn new(init: &mut Init, name: &str, out: usize, inp: usize, bias: bool) -> Self {
        let w = init.normal(format!("{name}.w"), &[out, inp]);
        let b = bias.then(|| init.full(format!("{name}.b"), &[out], 0.0));
        Linear { w, b }
    }

    pub fn apply(&self, g: &mut Graph, s: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(s, self.w);
        let b = self.b.map(|b| g.param(s, b));
        g.linear(x, w, b)
    }

    pub fn weight(&self) -> ParamId {
        self.w
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LayerNorm {
    gain: ParamId,
    offset: ParamId,
}

impl LayerNorm {
    pub fn new(init: &mut Init, name: &str, d: usize) -> Self {
        LayerNorm {
            gain: init.full(format!("{name}.gain"), &[d], 1.0),
            offset: init.full(format!("{name}.offset"), &[d], 0.0),
        }
    }

    pub fn apply(&self, g: &mut Graph, s: &ParamStore, x: Var) -> Result<Var> {
        let gain = g.param(s, self.gain);
        let offset = g.param(s, self.offset);
        g.layer_norm(x, gain, offset, LN_EPS)
    }
}

pub(crate) fn dropout(g: &mut Graph, pass: &mut Pass, x: Var) -> Result<Var> {
    let Some((rate, rng)) = pass.dropout.as_mut() else {
        return Ok(x);
    };
    let rate = *rate;
    if rate == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 - rate;
    let shape = g.shape(x).to_vec();
    let n = g.value(x).numel();
    let mask = (0..n)
        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    let m = g.constant(Tensor::new(shape, mask)?);
    g.mul(x, m)
}

/// Multi-head scaled dot-product attention with output projection.
#[derive(Debug, Clone)]
pub(crate) struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
}

impl Attention {
    pub fn new(init: &mut Init, name: &str, d: usize, heads: usize) -> Self {
        Attention {
            q: Linear::new(init, &format!("{name}.q"), d, d, true),
            k: Linear::new(init, &format!("{name}.k"), d, d, true),
            v: Linear::new(init, &format!("{name}.v"), d, d, true),
            o: Linear::new(init, &format!("{name}.o"), d, d, true),
            heads,
        }
    }

    /// `query: t×d` attends over `memory: n×d`. With `causal`, row `i` sees
    /// memory rows `0..=i` only.
    #[allow(clippy::too_many_arguments)]
    pub fn apply(
        &self,
        g: &mut Graph,
        s: &ParamStore,
        pass: &mut Pass,
        query: Var,
        memory: Var,
        causal: bool,
        kind: AttentionKind,
        layer: usize,
    ) -> Result<Var> {
        let q = self.q.apply(g, s, query)?;
        let k = self.k.apply(g, s, memory)?;
        let v = self.v.apply(g, s, memory)?;
        let (t, d) = (g.shape(q)[0], g.shape(q)[1]);
        let n = g.shape(k)[0];
        let dk = d / self.heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let mask: Option<Vec<bool>> = causal.then(|| {
            (0..t)
                .flat_map(|i| (0..n).map(move |j| j <= i))
                .collect()
        });
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * dk, dk)?;
            let kh = g.slice_cols(k, h * dk, dk)?;
            let vh = g.slice_cols(v, h * dk, dk)?;
            let scores = g.matmul_nt(qh, kh)?;
            let scores = g.scale(scores, scale);
            let alpha = match &mask {
                Some(m) => g.masked_softmax_rows(scores, m)?,
                None => g.softmax(scores, 1)?,
            };
            pass.record(g, kind, layer, h, alpha);
            outs.push(g.matmul(alpha, vh)?);
        }
        let cat = g.concat_cols(&outs)?;
        self.o.apply(g, s, cat)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct FeedForward {
    w1: Linear,
    w2: Linear,
}

impl FeedForward {
    pub fn new(init: &mut Init, name: &str, d: usize, d_ff: usize, bias: bool) -> Self {
        FeedForward {
            w1: Linear::new(init, &format!("{name}.w1"), d_ff, d, bias),
            w2: Linear::new(init, &format!("{name}.w2"), d, d_ff, bias),
        }
    }

    pub fn apply(&self, g: &mut Graph, s: &ParamStore, x: Var) -> Result<Var> {
        let h = self.w1.apply(g, s, x)?;
        let h = g.activation(h, Activation::Gelu);
        self.w2.apply(g, s, h)
    }

    pub fn weights(&self) -> [ParamId; 2] {
        [self.w1.weight(), self.w2.weight()]
    }
}

/// Relation-aware multi-head graph attention with a scalar score per pair:
/// `z_ij = LeakyReLU(a_q·W_q q_i + a_k·W_k k_j + a_r·W_r r_ij)`, softmax over
/// `j`, aggregation `σ(Σ_j α_ij W_v k_j)`, heads concatenated and projected.
#[derive(Debug, Clone)]
pub(crate) struct GraphAttention {
    wq: ParamId,
    wk: ParamId,
    wr: ParamId,
    wv: ParamId,
    aq: ParamId,
    ak: ParamId,
    ar: ParamId,
    wo: ParamId,
    heads: usize,
    head_dim: usize,
}

/// Raw parameter values of one graph-attention block, for inspection.
#[derive(Debug, Clone)]
pub struct GraphAttentionWeights {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wr: Tensor,
    pub wv: Tensor,
    pub aq: Tensor,
    pub ak: Tensor,
    pub ar: Tensor,
    pub wo: Tensor,
    pub heads: usize,
}

impl GraphAttention {
    pub fn new(
        init: &mut Init,
        name: &str,
        d_in: usize,
        d_rel: usize,
        d_out: usize,
        heads: usize,
    ) -> Self {
        let head_dim = d_in / heads;
        let inner = head_dim * heads;
        GraphAttention {
            wq: init.normal(format!("{name}.wq"), &[inner, d_in]),
            wk: init.normal(format!("{name}.wk"), &[inner, d_in]),
            wr: init.normal(format!("{name}.wr"), &[inner, d_rel]),
            wv: init.normal(format!("{name}.wv"), &[inner, d_in]),
            aq: init.normal(format!("{name}.aq"), &[heads, head_dim]),
            ak: init.normal(format!("{name}.ak"), &[heads, head_dim]),
            ar: init.normal(format!("{name}.ar"), &[heads, head_dim]),
            wo: init.normal(format!("{name}.wo"), &[d_out, inner]),
            heads,
            head_dim,
        }
    }

    pub fn weights(&self, s: &ParamStore) -> GraphAttentionWeights {
        GraphAttentionWeights {
            wq: s.get(self.wq).clone(),
            wk: s.get(self.wk).clone(),
            wr: s.get(self.wr).clone(),
            wv: s.get(self.wv).clone(),
            aq: s.get(self.aq).clone(),
            ak: s.get(self.ak).clone(),
            ar: s.get(self.ar).clone(),
            wo: s.get(self.wo).clone(),
            heads: self.heads,
        }
    }

    pub fn score_weights(&self) -> [ParamId; 3] {
        [self.aq, self.ak, self.ar]
    }

    /// `queries: nq×d_in`, `keys: nk×d_in`, `relations: (nq·nk)×d_rel` with
    /// row `i·nk + j` for the pair `(i, j)`.
    #[allow(clippy::too_many_arguments)]
    pub fn apply(
        &self,
        g: &mut Graph,
        s: &ParamStore,
        pass: &mut Pass,
        queries: Var,
        keys: Var,
        relations: Var,
        act: (f64, Activation),
        kind: AttentionKind,
        layer: usize,
    ) -> Result<Var> {
        let (slope, sigma) = act;
        let nq = g.shape(queries)[0];
        let nk = g.shape(keys)[0];
        if g.shape(relations)[0] != nq * nk {
            return Err(Error::Grounding(format!(
                "graph attention needs {} relation rows, got {}",
                nq * nk,
                g.shape(relations)[0]
            )));
        }
        let wq = g.param(s, self.wq);
        let wk = g.param(s, self.wk);
        let wr = g.param(s, self.wr);
        let wv = g.param(s, self.wv);
        let aq = g.param(s, self.aq);
        let ak = g.param(s, self.ak);
        let ar = g.param(s, self.ar);
        let dp = self.head_dim;
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let wq_h = g.slice_rows(wq, h * dp, dp)?;
            let wk_h = g.slice_rows(wk, h * dp, dp)?;
            let wr_h = g.slice_rows(wr, h * dp, dp)?;
            let wv_h = g.slice_rows(wv, h * dp, dp)?;
            let aq_h = g.slice_rows(aq, h, 1)?;
            let ak_h = g.slice_rows(ak, h, 1)?;
            let ar_h = g.slice_rows(ar, h, 1)?;

            let q = g.linear(queries, wq_h, None)?;
            let sq = g.linear(q, aq_h, None)?;
            let k = g.linear(keys, wk_h, None)?;
            let sk = g.linear(k, ak_h, None)?;
            let r = g.linear(relations, wr_h, None)?;
            let sr = g.linear(r, ar_h, None)?;
            let sr = g.reshape(sr, &[nq, nk])?;
            let pair = g.outer_sum(sq, sk);
            let z = g.add(pair, sr)?;
            let z = g.activation(z, Activation::LeakyRelu(slope));
            let alpha = g.softmax(z, 1)?;
            pass.record(g, kind, layer, h, alpha);

            let v = g.linear(keys, wv_h, None)?;
            let agg = g.matmul(alpha, v)?;
            outs.push(g.activation(agg, sigma));
        }
        let cat = g.concat_cols(&outs)?;
        let wo = g.param(s, self.wo);
        g.linear(cat, wo, None)
    }
}
