//! The MambaTron cell: a bidirectional Mamba layer produces one context row
//! per token, the position signal is added to it, and the Block-Transformer
//! attends over tokens plus those contexts.

use rand::Rng;

use crate::blockattn::{block_layer, BlockAttnLayer, BlockAttnParams, BlockConfig};
use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::ssm::{bidirectional_context, BidirectionalMamba, SelectiveSsmParams};

const LN_EPS: f64 = 1e-5;

/// Tokens and, for point sequences, their GCP embeddings.
#[derive(Clone, Debug)]
pub struct CellInput {
    pub tokens: Tensor,
    pub gcp: Option<Tensor>,
}

impl CellInput {
    pub fn new(tokens: Tensor, gcp: Option<Tensor>) -> Result<Self> {
        if let Some(g) = &gcp {
            if g.shape() != tokens.shape() {
                return Err(Error::Argument(format!(
                    "gcp {:?} does not match tokens {:?}",
                    g.shape(),
                    tokens.shape()
                )));
            }
        }
        Ok(Self { tokens, gcp })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CellConfig {
    pub block: BlockConfig,
    pub state_dim: usize,
    /// Rows of the learned position table used when no GCP is given.
    pub max_len: usize,
    pub zoh_b: bool,
}

/// Plain tensors of one cell.
#[derive(Clone, Debug)]
pub struct CellParams {
    pub ssm_fwd: SelectiveSsmParams,
    pub ssm_bwd: SelectiveSsmParams,
    pub w_fuse: Tensor,
    pub b_fuse: Tensor,
    pub pos: Tensor,
    pub attn: BlockAttnParams,
}

fn check_len(l: usize, pos_rows: usize) -> Result<()> {
    if l == 0 {
        return Err(Error::Argument("empty sequence".into()));
    }
    if l > pos_rows {
        return Err(Error::Argument(format!(
            "sequence of {l} exceeds the {pos_rows}-row position table"
        )));
    }
    Ok(())
}

/// `ctx + gcp`, or `ctx + pos[..L]` without GCP.
pub fn cell_no_blocktr(input: &CellInput, p: &CellParams) -> Result<Tensor> {
    let l = input.tokens.rows();
    check_len(l, p.pos.rows())?;
    let ctx = bidirectional_context(&input.tokens, &p.ssm_fwd, &p.ssm_bwd, &p.w_fuse, &p.b_fuse)?;
    match &input.gcp {
        Some(gcp) => ctx.zip_map(gcp, |a, b| a + b),
        None => ctx.zip_map(&p.pos.slice_rows(0, l), |a, b| a + b),
    }
}

pub fn mambatron_forward(input: &CellInput, p: &CellParams, cfg: &CellConfig) -> Result<Tensor> {
    let ctx = cell_no_blocktr(input, p)?;
    block_layer(&input.tokens, &ctx, &cfg.block, &p.attn)
}

/// Registered weights of one cell.
#[derive(Clone, Debug)]
pub struct MambaTronCell {
    pub mamba: BidirectionalMamba,
    pub attn: BlockAttnLayer,
    pub pos: ParamId,
}

impl MambaTronCell {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, cfg: &CellConfig, rng: &mut R) -> Self {
        let c = cfg.block.c;
        let mamba = BidirectionalMamba::init(store, &format!("{prefix}.mamba"), c, cfg.state_dim, cfg.zoh_b, rng);
        let attn = BlockAttnLayer::register(store, &format!("{prefix}.attn"), BlockAttnParams::init(c, rng));
        let pos = store.add(
            format!("{prefix}.pos"),
            Tensor::uniform(&[cfg.max_len, c], 0.02, rng),
        );
        Self { mamba, attn, pos }
    }

    pub fn snapshot(&self, store: &ParamStore) -> CellParams {
        CellParams {
            ssm_fwd: self.mamba.fwd.snapshot(store),
            ssm_bwd: self.mamba.bwd.snapshot(store),
            w_fuse: store.get(self.mamba.w_fuse).clone(),
            b_fuse: store.get(self.mamba.b_fuse).clone(),
            pos: store.get(self.pos).clone(),
            attn: self.attn.snapshot(store),
        }
    }

    /// Context rows after the position signal is added.
    pub fn context(&self, g: &mut Graph, store: &ParamStore, x: Var, gcp: Option<Var>) -> Result<Var> {
        let l = g.value(x).rows();
        let pos_rows = store.get(self.pos).rows();
        check_len(l, pos_rows)?;
        if let Some(gv) = gcp {
            if g.shape(gv) != g.shape(x) {
                return Err(Error::Argument(format!(
                    "gcp {:?} does not match tokens {:?}",
                    g.shape(gv),
                    g.shape(x)
                )));
            }
        }
        let ctx = self.mamba.forward(g, store, x)?;
        let add = match gcp {
            Some(gv) => gv,
            None => {
                let table = g.param(store, self.pos);
                g.slice_rows(table, 0, l)?
            }
        };
        g.add(ctx, add)
    }

    /// Full cell, or the context rows alone when `block_tr` is false.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        gcp: Option<Var>,
        cfg: &CellConfig,
        block_tr: bool,
    ) -> Result<Var> {
        let ctx = self.context(g, store, x, gcp)?;
        if !block_tr {
            return Ok(ctx);
        }
        self.attn.forward(g, store, x, ctx, &cfg.block)
    }
}

/// `D` cells with residual connections and a closing LayerNorm.
#[derive(Clone, Debug)]
pub struct CellStack {
    pub cells: Vec<MambaTronCell>,
    pub ln_g: ParamId,
    pub ln_b: ParamId,
}

impl CellStack {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        depth: usize,
        cfg: &CellConfig,
        rng: &mut R,
    ) -> Self {
        let cells = (0..depth)
            .map(|i| MambaTronCell::init(store, &format!("{prefix}.cell{i}"), cfg, rng))
            .collect();
        let ln_g = store.add(format!("{prefix}.ln_g"), Tensor::full(&[cfg.block.c], 1.0));
        let ln_b = store.add(format!("{prefix}.ln_b"), Tensor::zeros(&[cfg.block.c]));
        Self { cells, ln_g, ln_b }
    }

    /// Residual path between cells, then LayerNorm. The full cell already
    /// carries its input through the attention and FFN residuals, so only the
    /// bare context rows are added onto `x`.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        gcp: Option<Var>,
        cfg: &CellConfig,
        block_tr: bool,
    ) -> Result<Var> {
        let mut h = x;
        for cell in &self.cells {
            let y = cell.forward(g, store, h, gcp, cfg, block_tr)?;
            h = if block_tr { y } else { g.add(h, y)? };
        }
        let lg = g.param(store, self.ln_g);
        let lb = g.param(store, self.ln_b);
        g.layer_norm(h, lg, lb, LN_EPS)
    }
}
