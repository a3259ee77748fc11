//! Forward stages. Each stage reads its weights from a [`Bound`] set of
//! graph variables and works on channels-last `[B, T, C]` activations.

use indexmap::IndexMap;
use rand::Rng;

use super::config::{ModelConfig, QkConv};
use crate::error::{Error, Result};
use crate::tensor::{Graph, GruParams, Tensor, Var};

/// Parameters placed on a graph, by name.
#[derive(Debug, Clone, Default)]
pub struct Bound {
    vars: IndexMap<String, Var>,
}

impl Bound {
    pub fn insert(&mut self, name: impl Into<String>, v: Var) {
        self.vars.insert(name.into(), v);
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("parameter {name} is not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

fn linear(g: &mut Graph, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let y = g.matmul(x, p.get(&format!("{prefix}_w"))?)?;
    g.add(y, p.get(&format!("{prefix}_b"))?)
}

fn expect_shape(g: &Graph, x: Var, op: &'static str, rank: usize, last: usize) -> Result<()> {
    let s = g.shape(x);
    if s.len() != rank || s[rank - 1] != last {
        return Err(Error::dim(op, format!("input {s:?}, expected rank {rank} with last axis {last}")));
    }
    Ok(())
}

/// Dynamic variable selection. Returns the weighted embeddings
/// `[B, T, F·D_e]` and the selection weights `ω[B, T, F]`.
pub fn dvs_forward(g: &mut Graph, p: &Bound, c: &ModelConfig, x: Var) -> Result<(Var, Var)> {
    expect_shape(g, x, "dvs", 3, c.n_features)?;
    let (b, t) = (g.shape(x)[0], g.shape(x)[1]);
    let (f, de) = (c.n_features, c.d_embed());
    let x4 = g.reshape(x, &[b, t, f, 1])?;
    let e = g.mul(x4, p.get("dvs.embed_w")?)?;
    let e = g.add(e, p.get("dvs.embed_b")?)?;
    let (weighted, omega) = if c.use_dvs {
        let s = linear(g, p, "dvs.score", e)?;
        let s = g.reshape(s, &[b, t, f])?;
        let omega = g.softmax(s, 2)?;
        let w4 = g.reshape(omega, &[b, t, f, 1])?;
        (g.mul(e, w4)?, omega)
    } else {
        let omega = g.constant(Tensor::full(&[b, t, f], 1.0 / f as f64));
        (g.scale(e, 1.0 / f as f64), omega)
    };
    Ok((g.reshape(weighted, &[b, t, f * de])?, omega))
}

/// Multi-scale convolution (or its position-wise linear substitute).
pub fn msc_forward<R: Rng + ?Sized>(
    g: &mut Graph,
    p: &Bound,
    c: &ModelConfig,
    e: Var,
    rng: Option<&mut R>,
) -> Result<Var> {
    expect_shape(g, e, "msc", 3, c.n_features * c.d_embed())?;
    if !c.use_msc {
        let h = linear(g, p, "msc.linear", e)?;
        return g.dropout(h, c.dropout, rng);
    }
    let mut branches = Vec::with_capacity(3);
    for j in 0..c.kernels.len() {
        let y = g.conv1d_same(e, p.get(&format!("msc.conv{j}.w"))?, 1)?;
        let y = g.add(y, p.get(&format!("msc.conv{j}.b"))?)?;
        branches.push(g.relu(y));
    }
    let cat = g.concat(&branches, 2)?;
    let cat = g.dropout(cat, c.dropout, rng)?;
    linear(g, p, "msc.proj", cat)
}

/// Squeeze-and-excitation channel gate.
pub fn se_forward(g: &mut Graph, p: &Bound, c: &ModelConfig, h: Var) -> Result<Var> {
    if !c.use_se {
        return Ok(h);
    }
    let d = c.d_model();
    expect_shape(g, h, "se", 3, d)?;
    let b = g.shape(h)[0];
    let z = g.mean_pool_time(h)?;
    let s = g.matmul(z, p.get("se.w1")?)?;
    let s = g.relu(s);
    let u = g.matmul(s, p.get("se.w2")?)?;
    let u = g.sigmoid(u);
    let u = g.reshape(u, &[b, 1, d])?;
    g.mul(h, u)
}

/// `[B, T, H·d]` → `[B·H, T, d]`.
fn split_heads(g: &mut Graph, x: Var, heads: usize) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let (b, t, d) = (s[0], s[1], s[2] / heads);
    let y = g.reshape(x, &[b, t, heads, d])?;
    let y = g.permute(y, &[0, 2, 1, 3])?;
    g.reshape(y, &[b * heads, t, d])
}

fn merge_heads(g: &mut Graph, x: Var, batch: usize) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let (heads, t, d) = (s[0] / batch, s[1], s[2]);
    let y = g.reshape(x, &[batch, heads, t, d])?;
    let y = g.permute(y, &[0, 2, 1, 3])?;
    g.reshape(y, &[batch, t, heads * d])
}

/// Scaled dot-product attention per head. Returns the merged output
/// `[B, T, D]` and the attention weights `[B·H, T, T]`.
pub fn multi_head(g: &mut Graph, q: Var, k: Var, v: Var, heads: usize) -> Result<(Var, Var)> {
    let b = g.shape(q)[0];
    let d_head = g.shape(q)[2] / heads;
    let (qh, kh, vh) = (split_heads(g, q, heads)?, split_heads(g, k, heads)?, split_heads(g, v, heads)?);
    let logits = g.batch_matmul(qh, kh, true)?;
    let logits = g.scale(logits, 1.0 / (d_head as f64).sqrt());
    let attn = g.softmax(logits, 2)?;
    let out = g.batch_matmul(attn, vh, false)?;
    Ok((merge_heads(g, out, b)?, attn))
}

/// Attention output and, per branch, the attention weights.
pub struct AttentionOut {
    pub output: Var,
    pub weights: Vec<Var>,
}

/// Trend-aware attention: queries and keys from same-padded temporal
/// convolutions at each kernel extent, a shared value projection, and a
/// linear fusion of the branch outputs.
pub fn trend_attention_forward<R: Rng + ?Sized>(
    g: &mut Graph,
    p: &Bound,
    c: &ModelConfig,
    h: Var,
    rng: Option<&mut R>,
) -> Result<AttentionOut> {
    let d = c.d_model();
    expect_shape(g, h, "trend_attention", 3, d)?;
    let groups = match c.qk_conv {
        QkConv::Grouped => c.heads,
        QkConv::Full => 1,
    };
    let v = linear(g, p, "attn.v", h)?;
    let mut outs = Vec::with_capacity(3);
    let mut weights = Vec::with_capacity(3);
    for j in 0..c.kernels.len() {
        let mut qk = [h; 2];
        for (slot, name) in qk.iter_mut().zip(["q", "k"]) {
            let y = g.conv1d_same(h, p.get(&format!("attn.{name}{j}.w"))?, groups)?;
            *slot = g.add(y, p.get(&format!("attn.{name}{j}.b"))?)?;
        }
        let (o, a) = multi_head(g, qk[0], qk[1], v, c.heads)?;
        outs.push(o);
        weights.push(a);
    }
    let cat = g.concat(&outs, 2)?;
    let fused = linear(g, p, "attn.fuse", cat)?;
    Ok(AttentionOut {
        output: g.dropout(fused, c.dropout, rng)?,
        weights,
    })
}

/// Multi-head attention with linear query/key/value maps and an output
/// projection.
pub fn standard_attention_forward<R: Rng + ?Sized>(
    g: &mut Graph,
    p: &Bound,
    c: &ModelConfig,
    h: Var,
    rng: Option<&mut R>,
) -> Result<AttentionOut> {
    expect_shape(g, h, "standard_attention", 3, c.d_model())?;
    let q = linear(g, p, "attn.q", h)?;
    let k = linear(g, p, "attn.k", h)?;
    let v = linear(g, p, "attn.v", h)?;
    let (o, a) = multi_head(g, q, k, v, c.heads)?;
    let o = linear(g, p, "attn.out", o)?;
    Ok(AttentionOut {
        output: g.dropout(o, c.dropout, rng)?,
        weights: vec![a],
    })
}

/// Position-wise feed-forward, GRU scan from a zero state, linear head.
/// Returns predictions of shape `[B]`.
pub fn decoder_forward<R: Rng + ?Sized>(
    g: &mut Graph,
    p: &Bound,
    c: &ModelConfig,
    h: Var,
    rng: Option<&mut R>,
) -> Result<Var> {
    let d = c.d_model();
    expect_shape(g, h, "decoder", 3, d)?;
    let (b, t) = (g.shape(h)[0], g.shape(h)[1]);
    let y = linear(g, p, "ffn.l1", h)?;
    let y = g.relu(y);
    let y = if c.ffn_dropout { g.dropout(y, c.dropout, rng)? } else { y };
    let y = linear(g, p, "ffn.l2", y)?;
    let gru = GruParams {
        w_z: p.get("gru.w_z")?,
        u_z: p.get("gru.u_z")?,
        b_z: p.get("gru.b_z")?,
        w_r: p.get("gru.w_r")?,
        u_r: p.get("gru.u_r")?,
        b_r: p.get("gru.b_r")?,
        w_h: p.get("gru.w_h")?,
        u_h: p.get("gru.u_h")?,
        b_h: p.get("gru.b_h")?,
    };
    let mut state = g.constant(Tensor::zeros(&[b, d]));
    for step in 0..t {
        let x_t = g.select(y, 1, step)?;
        state = g.gru_cell(x_t, state, &gru)?;
    }
    let out = linear(g, p, "head", state)?;
    g.reshape(out, &[b])
}
