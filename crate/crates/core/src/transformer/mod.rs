//! Pre-norm Transformer stacks over `[batch, tokens, d]` tensors, with optional
//! capture of every intermediate representation.

mod capture;

pub use capture::{CaptureRecord, CaptureTrace, Label};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::numerics::{Bound, Graph, InitScheme, ParamStore, Rng, Scalar, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionScale {
    /// Divide scores by `d_k`.
    PaperDk,
    /// Divide scores by `sqrt(d_k)`.
    SqrtDk,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformerConfig {
    pub blocks: usize,
    pub heads: usize,
    /// Feed-forward hidden width.
    pub hidden: usize,
    pub dropout: f64,
    pub attention_scale: AttentionScale,
    /// Layer norm after the last block.
    pub final_norm: bool,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        TransformerConfig {
            blocks: 4,
            heads: 1,
            hidden: 128,
            dropout: 0.0,
            attention_scale: AttentionScale::PaperDk,
            final_norm: false,
        }
    }
}

impl TransformerConfig {
    pub fn validate(&self, d: usize) -> Result<()> {
        if self.blocks == 0 || self.heads == 0 || self.hidden == 0 {
            bail!(InvalidArgument, "blocks, heads and hidden must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            bail!(InvalidArgument, "dropout {} outside [0, 1)", self.dropout);
        }
        if !d.is_multiple_of(self.heads) {
            bail!(InvalidArgument, "{} heads do not divide token width {}", self.heads, d);
        }
        Ok(())
    }
}

/// Register the parameters of a stack under `prefix`.
pub fn init_stack<T: Scalar>(
    store: &mut ParamStore<T>,
    prefix: &str,
    d: usize,
    cfg: &TransformerConfig,
) -> Result<()> {
    cfg.validate(d)?;
    let h = cfg.hidden;
    for b in 0..cfg.blocks {
        let p = format!("{prefix}.b{b}");
        for ln in ["ln1", "ln2"] {
            store.init(&format!("{p}.{ln}.g"), &[d], InitScheme::Ones)?;
            store.init(&format!("{p}.{ln}.b"), &[d], InitScheme::Zeros)?;
        }
        for w in ["wq", "wk", "wv", "wo"] {
            store.init(&format!("{p}.attn.{w}"), &[d, d], InitScheme::KaimingUniform { fan_in: d })?;
        }
        store.init(&format!("{p}.ffn.w1"), &[d, h], InitScheme::KaimingUniform { fan_in: d })?;
        store.init(&format!("{p}.ffn.b1"), &[h], InitScheme::Zeros)?;
        store.init(&format!("{p}.ffn.w2"), &[h, d], InitScheme::KaimingUniform { fan_in: h })?;
        store.init(&format!("{p}.ffn.b2"), &[d], InitScheme::Zeros)?;
    }
    if cfg.final_norm {
        store.init(&format!("{prefix}.lnf.g"), &[d], InitScheme::Ones)?;
        store.init(&format!("{prefix}.lnf.b"), &[d], InitScheme::Zeros)?;
    }
    Ok(())
}

/// Per-pass options: capture sink and, during training, a dropout stream.
#[derive(Default)]
pub struct PassCtx<'a> {
    pub capture: Option<&'a mut CaptureTrace>,
    pub dropout_rng: Option<&'a mut Rng>,
}

impl PassCtx<'_> {
    fn record<T: Scalar>(&mut self, g: &Graph<T>, label: Label, block: usize, v: Var) {
        if let Some(c) = self.capture.as_deref_mut() {
            c.push(label, block, g.value(v).cast());
        }
    }
}

/// Scaled dot-product self-attention with output projection; returns the
/// output and the per-head `[batch, M, M]` weight tensors.
#[allow(clippy::too_many_arguments)]
pub fn attention<T: Scalar>(
    g: &mut Graph<T>,
    e: Var,
    wq: Var,
    wk: Var,
    wv: Var,
    wo: Var,
    heads: usize,
    scale: AttentionScale,
) -> Result<(Var, Vec<Var>)> {
    let s = g.shape(e).to_vec();
    if s.len() != 3 {
        bail!(Shape, "attention expects [batch, tokens, d], got {:?}", s);
    }
    let d = s[2];
    if heads == 0 || !d.is_multiple_of(heads) {
        bail!(InvalidArgument, "{} heads for width {}", heads, d);
    }
    let dk = d / heads;
    let div = match scale {
        AttentionScale::PaperDk => dk as f64,
        AttentionScale::SqrtDk => (dk as f64).sqrt(),
    };
    let q = g.matmul(e, wq)?;
    let k = g.matmul(e, wk)?;
    let v = g.matmul(e, wv)?;
    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                g.slice(q, 2, h * dk, dk)?,
                g.slice(k, 2, h * dk, dk)?,
                g.slice(v, 2, h * dk, dk)?,
            )
        };
        let scores = g.bmm(qh, kh, false, true)?;
        let scores = g.scale(scores, 1.0 / div);
        let a = g.softmax(scores)?;
        outs.push(g.bmm(a, vh, false, false)?);
        weights.push(a);
    }
    let cat = if heads == 1 { outs[0] } else { g.concat(&outs, 2)? };
    Ok((g.matmul(cat, wo)?, weights))
}

fn dropout<T: Scalar>(g: &mut Graph<T>, x: Var, p: f64, ctx: &mut PassCtx) -> Result<Var> {
    let Some(rng) = ctx.dropout_rng.as_deref_mut() else {
        return Ok(x);
    };
    if p == 0.0 {
        return Ok(x);
    }
    let shape = g.shape(x).to_vec();
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<f64> = (0..g.value(x).len())
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect();
    let m = g.constant(Tensor::from_f64(&shape, &mask)?);
    g.mul(x, m)
}

/// One block: `res = E + Attn(LN1(E))`, `out = res + FFN(LN2(res))`.
pub fn block_forward<T: Scalar>(
    g: &mut Graph<T>,
    p: &Bound,
    prefix: &str,
    index: usize,
    cfg: &TransformerConfig,
    e: Var,
    ctx: &mut PassCtx,
) -> Result<Var> {
    let n = |s: &str| format!("{prefix}.b{index}.{s}");
    ctx.record(g, Label::In, index, e);
    let n1 = g.layer_norm(e, p.get(&n("ln1.g"))?, p.get(&n("ln1.b"))?)?;
    ctx.record(g, Label::N1, index, n1);
    let (att, _) = attention(
        g,
        n1,
        p.get(&n("attn.wq"))?,
        p.get(&n("attn.wk"))?,
        p.get(&n("attn.wv"))?,
        p.get(&n("attn.wo"))?,
        cfg.heads,
        cfg.attention_scale,
    )?;
    let att = dropout(g, att, cfg.dropout, ctx)?;
    ctx.record(g, Label::Attn, index, att);
    let res = g.add(e, att)?;
    ctx.record(g, Label::Res, index, res);
    let n2 = g.layer_norm(res, p.get(&n("ln2.g"))?, p.get(&n("ln2.b"))?)?;
    ctx.record(g, Label::N2, index, n2);
    let h = g.matmul(n2, p.get(&n("ffn.w1"))?)?;
    let h = g.add(h, p.get(&n("ffn.b1"))?)?;
    let h = g.silu(h);
    let f = g.matmul(h, p.get(&n("ffn.w2"))?)?;
    let f = g.add(f, p.get(&n("ffn.b2"))?)?;
    let f = dropout(g, f, cfg.dropout, ctx)?;
    ctx.record(g, Label::Ffn, index, f);
    let out = g.add(res, f)?;
    ctx.record(g, Label::Out, index, out);
    Ok(out)
}

/// Apply all blocks in order (plus the optional final norm).
pub fn stack_forward<T: Scalar>(
    g: &mut Graph<T>,
    p: &Bound,
    prefix: &str,
    cfg: &TransformerConfig,
    e: Var,
    ctx: &mut PassCtx,
) -> Result<Var> {
    let mut x = e;
    for b in 0..cfg.blocks {
        x = block_forward(g, p, prefix, b, cfg, x, ctx)?;
    }
    if cfg.final_norm {
        x = g.layer_norm(x, p.get(&format!("{prefix}.lnf.g"))?, p.get(&format!("{prefix}.lnf.b"))?)?;
    }
    Ok(x)
}
