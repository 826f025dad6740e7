//! Block-Transformer layer.
//!
//! The sequence is cut into blocks of `w_blk` tokens. Inside a block every
//! token attends to the block's own tokens and to the block's context rows
//! (`2·w_blk` keys); nothing crosses a block boundary. The layer is pre-norm
//! attention with a residual, then a SiLU FFN (hidden `4C`) with a residual.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::ops::softmax_in_place;
use crate::numerics::{CustomBackward, Graph, ParamId, ParamStore, Tensor, Var};

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockConfig {
    pub w_blk: usize,
    pub heads: usize,
    pub c: usize,
}

impl BlockConfig {
    pub fn validate(&self) -> Result<()> {
        if self.w_blk == 0 {
            return Err(Error::Argument("block size must be at least 1".into()));
        }
        if self.heads == 0 || self.c % self.heads != 0 {
            return Err(Error::Argument(format!(
                "channel dim {} not divisible by {} heads",
                self.c, self.heads
            )));
        }
        Ok(())
    }
}

/// One block: `w_blk` token rows, their context rows, and a validity mask
/// (false on zero padding in the last block).
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub tokens: Tensor,
    pub contexts: Tensor,
    pub valid: Vec<bool>,
}

impl Block {
    pub fn n_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Splits `seq` and `ctx` (both L×C) into `⌈L/w_blk⌉` zero-padded blocks.
pub fn block_partition(seq: &Tensor, ctx: &Tensor, cfg: &BlockConfig) -> Result<Vec<Block>> {
    cfg.validate()?;
    if seq.shape() != ctx.shape() {
        return Err(Error::Argument(format!(
            "sequence {:?} and context {:?} differ",
            seq.shape(),
            ctx.shape()
        )));
    }
    let (l, c, w) = (seq.rows(), seq.cols(), cfg.w_blk);
    let mut blocks = Vec::with_capacity(l.div_ceil(w));
    for start in (0..l).step_by(w) {
        let m = w.min(l - start);
        let mut tokens = Tensor::zeros(&[w, c]);
        let mut contexts = Tensor::zeros(&[w, c]);
        tokens.data_mut()[..m * c].copy_from_slice(seq.slice_rows(start, m).data());
        contexts.data_mut()[..m * c].copy_from_slice(ctx.slice_rows(start, m).data());
        let valid = (0..w).map(|i| i < m).collect();
        blocks.push(Block {
            tokens,
            contexts,
            valid,
        });
    }
    Ok(blocks)
}

/// Attention of projected queries over in-block token and context keys.
///
/// Returns the output rows and the attention weights, laid out per row and
/// head as `2·m` entries (m tokens, then m contexts) padded to `2·w_blk`.
#[allow(clippy::too_many_arguments)]
pub fn blocked_attention_forward(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    kc: &Tensor,
    vc: &Tensor,
    w_blk: usize,
    heads: usize,
) -> (Tensor, Vec<f64>) {
    let (l, c) = (q.rows(), q.cols());
    let dh = c / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let stride = 2 * w_blk;
    let mut out = Tensor::zeros(&[l, c]);
    let mut probs = vec![0.0; l * heads * stride];
    let mut scores = vec![0.0; stride];
    for start in (0..l).step_by(w_blk) {
        let m = w_blk.min(l - start);
        for i in start..start + m {
            for h in 0..heads {
                let hs = h * dh..(h + 1) * dh;
                let qi = &q.row(i)[hs.clone()];
                for j in 0..2 * m {
                    let kr = if j < m { k.row(start + j) } else { kc.row(start + j - m) };
                    scores[j] = qi.iter().zip(&kr[hs.clone()]).map(|(a, b)| a * b).sum::<f64>() * scale;
                }
                softmax_in_place(&mut scores[..2 * m]);
                let orow = &mut out.row_mut(i)[hs.clone()];
                for (j, &p) in scores[..2 * m].iter().enumerate() {
                    let vr = if j < m { v.row(start + j) } else { vc.row(start + j - m) };
                    for (o, &vv) in orow.iter_mut().zip(&vr[hs.clone()]) {
                        *o += p * vv;
                    }
                }
                let off = (i * heads + h) * stride;
                probs[off..off + 2 * m].copy_from_slice(&scores[..2 * m]);
            }
        }
    }
    (out, probs)
}

struct BlockedAttentionBackward {
    probs: Vec<f64>,
    w_blk: usize,
    heads: usize,
}

impl CustomBackward for BlockedAttentionBackward {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, gout: &Tensor) -> Vec<Option<Tensor>> {
        let (q, k, v, kc, vc) = (inputs[0], inputs[1], inputs[2], inputs[3], inputs[4]);
        let (l, c) = (q.rows(), q.cols());
        let (heads, w_blk) = (self.heads, self.w_blk);
        let dh = c / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let stride = 2 * w_blk;
        let mut gq = Tensor::zeros(q.shape());
        let mut gk = Tensor::zeros(k.shape());
        let mut gv = Tensor::zeros(v.shape());
        let mut gkc = Tensor::zeros(kc.shape());
        let mut gvc = Tensor::zeros(vc.shape());
        let mut gp = vec![0.0; stride];
        for start in (0..l).step_by(w_blk) {
            let m = w_blk.min(l - start);
            for i in start..start + m {
                for h in 0..heads {
                    let hs = h * dh..(h + 1) * dh;
                    let off = (i * heads + h) * stride;
                    let p = &self.probs[off..off + 2 * m];
                    let go = &gout.row(i)[hs.clone()];
                    let mut dot = 0.0;
                    for j in 0..2 * m {
                        let (vr, gvr) = if j < m {
                            (v.row(start + j), gv.row_mut(start + j))
                        } else {
                            (vc.row(start + j - m), gvc.row_mut(start + j - m))
                        };
                        gp[j] = go.iter().zip(&vr[hs.clone()]).map(|(a, b)| a * b).sum();
                        dot += p[j] * gp[j];
                        for (g, &o) in gvr[hs.clone()].iter_mut().zip(go) {
                            *g += p[j] * o;
                        }
                    }
                    let qi: Vec<f64> = q.row(i)[hs.clone()].to_vec();
                    for j in 0..2 * m {
                        let gs = p[j] * (gp[j] - dot) * scale;
                        if gs == 0.0 {
                            continue;
                        }
                        let (kr, gkr) = if j < m {
                            (k.row(start + j), gk.row_mut(start + j))
                        } else {
                            (kc.row(start + j - m), gkc.row_mut(start + j - m))
                        };
                        let kslice: Vec<f64> = kr[hs.clone()].to_vec();
                        for (g, &qq) in gkr[hs.clone()].iter_mut().zip(&qi) {
                            *g += gs * qq;
                        }
                        for (g, kk) in gq.row_mut(i)[hs.clone()].iter_mut().zip(kslice) {
                            *g += gs * kk;
                        }
                    }
                }
            }
        }
        vec![Some(gq), Some(gk), Some(gv), Some(gkc), Some(gvc)]
    }
}

/// Tape op for [`blocked_attention_forward`].
#[allow(clippy::too_many_arguments)]
pub fn blocked_attention_op(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    kc: Var,
    vc: Var,
    w_blk: usize,
    heads: usize,
) -> Result<Var> {
    let shape = g.shape(q).to_vec();
    for x in [k, v, kc, vc] {
        if g.shape(x) != shape.as_slice() {
            return Err(crate::error::dim_err("blocked_attention", &shape, g.shape(x)));
        }
    }
    let (out, probs) = blocked_attention_forward(
        g.value(q),
        g.value(k),
        g.value(v),
        g.value(kc),
        g.value(vc),
        w_blk,
        heads,
    );
    let (l, c) = (shape[0], shape[1]);
    // scores and weighted sum, each m·C per row; m ≤ w_blk
    let macs: usize = (0..l).step_by(w_blk).map(|s| w_blk.min(l - s)).map(|m| m * 4 * m * c).sum();
    g.add_macs(macs as u64);
    let probs = if g.recording() { probs } else { Vec::new() };
    Ok(g.custom(
        vec![q, k, v, kc, vc],
        out,
        Box::new(BlockedAttentionBackward { probs, w_blk, heads }),
    ))
}

/// Plain tensors for one Block-Transformer layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockAttnParams {
    pub ln1_g: Tensor,
    pub ln1_b: Tensor,
    pub lnc_g: Tensor,
    pub lnc_b: Tensor,
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    /// Key projection for the context half.
    pub w_kc: Tensor,
    /// Value projection for the context half.
    pub w_vc: Tensor,
    pub w_o: Tensor,
    pub b_o: Tensor,
    pub ln2_g: Tensor,
    pub ln2_b: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

const N_TENSORS: usize = 17;
const NAMES: [&str; N_TENSORS] = [
    "ln1_g", "ln1_b", "lnc_g", "lnc_b", "w_q", "w_k", "w_v", "w_kc", "w_vc", "w_o", "b_o", "ln2_g", "ln2_b", "w1",
    "b1", "w2", "b2",
];

impl BlockAttnParams {
    pub fn init<R: Rng + ?Sized>(c: usize, rng: &mut R) -> Self {
        let ones = Tensor::full(&[c], 1.0);
        let zeros = Tensor::zeros(&[c]);
        Self {
            ln1_g: ones.clone(),
            ln1_b: zeros.clone(),
            lnc_g: ones.clone(),
            lnc_b: zeros.clone(),
            w_q: Tensor::fan_in_uniform(&[c, c], rng),
            w_k: Tensor::fan_in_uniform(&[c, c], rng),
            w_v: Tensor::fan_in_uniform(&[c, c], rng),
            w_kc: Tensor::fan_in_uniform(&[c, c], rng),
            w_vc: Tensor::fan_in_uniform(&[c, c], rng),
            w_o: Tensor::fan_in_uniform(&[c, c], rng),
            b_o: zeros.clone(),
            ln2_g: ones,
            ln2_b: zeros.clone(),
            w1: Tensor::fan_in_uniform(&[c, 4 * c], rng),
            b1: Tensor::zeros(&[4 * c]),
            w2: Tensor::fan_in_uniform(&[4 * c, c], rng),
            b2: zeros,
        }
    }

    fn into_vec(self) -> Vec<Tensor> {
        vec![
            self.ln1_g, self.ln1_b, self.lnc_g, self.lnc_b, self.w_q, self.w_k, self.w_v, self.w_kc, self.w_vc,
            self.w_o, self.b_o, self.ln2_g, self.ln2_b, self.w1, self.b1, self.w2, self.b2,
        ]
    }

    fn from_vec(mut v: Vec<Tensor>) -> Self {
        let mut next = || v.remove(0);
        Self {
            ln1_g: next(),
            ln1_b: next(),
            lnc_g: next(),
            lnc_b: next(),
            w_q: next(),
            w_k: next(),
            w_v: next(),
            w_kc: next(),
            w_vc: next(),
            w_o: next(),
            b_o: next(),
            ln2_g: next(),
            ln2_b: next(),
            w1: next(),
            b1: next(),
            w2: next(),
            b2: next(),
        }
    }
}

/// Layer body over graph variables holding the weights, in [`NAMES`] order.
fn layer_forward(g: &mut Graph, w: &[Var], seq: Var, ctx: Var, cfg: &BlockConfig) -> Result<Var> {
    let xn = g.layer_norm(seq, w[0], w[1], LN_EPS)?;
    let cn = g.layer_norm(ctx, w[2], w[3], LN_EPS)?;
    let q = g.matmul(xn, w[4])?;
    let k = g.matmul(xn, w[5])?;
    let v = g.matmul(xn, w[6])?;
    let kc = g.matmul(cn, w[7])?;
    let vc = g.matmul(cn, w[8])?;
    let a = blocked_attention_op(g, q, k, v, kc, vc, cfg.w_blk, cfg.heads)?;
    let proj = g.linear(a, w[9], w[10])?;
    let h = g.add(seq, proj)?;
    let hn = g.layer_norm(h, w[11], w[12], LN_EPS)?;
    let f1 = g.linear(hn, w[13], w[14])?;
    let f1 = g.silu(f1);
    let f2 = g.linear(f1, w[15], w[16])?;
    g.add(h, f2)
}

/// Registered Block-Transformer weights.
#[derive(Clone, Debug)]
pub struct BlockAttnLayer {
    ids: Vec<ParamId>,
}

impl BlockAttnLayer {
    pub fn register(store: &mut ParamStore, prefix: &str, p: BlockAttnParams) -> Self {
        let ids = NAMES
            .iter()
            .zip(p.into_vec())
            .map(|(n, t)| store.add(format!("{prefix}.{n}"), t))
            .collect();
        Self { ids }
    }

    pub fn snapshot(&self, store: &ParamStore) -> BlockAttnParams {
        BlockAttnParams::from_vec(self.ids.iter().map(|&id| store.get(id).clone()).collect())
    }

    pub fn param_id(&self, name: &str) -> Option<ParamId> {
        NAMES.iter().position(|n| *n == name).map(|i| self.ids[i])
    }

    /// Whole-sequence layer on the tape.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, seq: Var, ctx: Var, cfg: &BlockConfig) -> Result<Var> {
        cfg.validate()?;
        if g.shape(seq) != g.shape(ctx) {
            return Err(Error::Argument(format!(
                "sequence {:?} and context {:?} differ",
                g.shape(seq),
                g.shape(ctx)
            )));
        }
        let w: Vec<Var> = self.ids.iter().map(|&id| g.param(store, id)).collect();
        layer_forward(g, &w, seq, ctx, cfg)
    }
}

fn eval_layer(seq: &Tensor, ctx: &Tensor, cfg: &BlockConfig, params: &BlockAttnParams) -> Result<Tensor> {
    let mut g = Graph::inference();
    let w: Vec<Var> = params.clone().into_vec().into_iter().map(|t| g.constant(t)).collect();
    let s = g.constant(seq.clone());
    let c = g.constant(ctx.clone());
    let out = layer_forward(&mut g, &w, s, c, cfg)?;
    Ok(g.value(out).clone())
}

/// One block through the layer; padded rows of the result are zero.
pub fn block_attention(block: &Block, cfg: &BlockConfig, params: &BlockAttnParams) -> Result<Tensor> {
    cfg.validate()?;
    let m = block.n_valid();
    if block.valid[..m].iter().any(|v| !v) {
        return Err(Error::Argument("padding must trail the valid rows".into()));
    }
    let mut out = Tensor::zeros(block.tokens.shape());
    if m == 0 {
        return Ok(out);
    }
    let cfg_m = BlockConfig { w_blk: m, ..*cfg };
    let y = eval_layer(&block.tokens.slice_rows(0, m), &block.contexts.slice_rows(0, m), &cfg_m, params)?;
    out.data_mut()[..y.numel()].copy_from_slice(y.data());
    Ok(out)
}

fn assemble(blocks: &[Block], outs: Vec<Tensor>, c: usize) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut rows = 0;
    for (b, o) in blocks.iter().zip(outs) {
        let m = b.n_valid();
        data.extend_from_slice(&o.data()[..m * c]);
        rows += m;
    }
    Tensor::new(vec![rows, c], data)
}

/// Partition, attend block by block, concatenate the valid rows.
pub fn block_layer(seq: &Tensor, ctx: &Tensor, cfg: &BlockConfig, params: &BlockAttnParams) -> Result<Tensor> {
    let blocks = block_partition(seq, ctx, cfg)?;
    let outs = blocks
        .iter()
        .map(|b| block_attention(b, cfg, params))
        .collect::<Result<Vec<_>>>()?;
    assemble(&blocks, outs, seq.cols())
}

/// Same as [`block_layer`] with blocks evaluated concurrently; every block
/// writes its own slice, so the result is identical.
pub fn block_layer_parallel(
    seq: &Tensor,
    ctx: &Tensor,
    cfg: &BlockConfig,
    params: &BlockAttnParams,
) -> Result<Tensor> {
    let blocks = block_partition(seq, ctx, cfg)?;
    let outs = blocks
        .par_iter()
        .map(|b| block_attention(b, cfg, params))
        .collect::<Result<Vec<_>>>()?;
    assemble(&blocks, outs, seq.cols())
}
