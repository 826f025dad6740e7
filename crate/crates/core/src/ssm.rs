//! The Mamba layer: a selective state space model with input-dependent
//! step size Δ and input/output projections B, C, discretized with a
//! zero-order hold on the diagonal state matrix.
//!
//! Per channel `c` and state `n`:
//!
//! ```text
//! Δ_t   = clamp(softplus(x_t W_Δ + b_Δ), 1e-4, 10)
//! ā_t   = exp(Δ_t[c] · A[c,n]),   A = −exp(a_log)
//! b̄_t   = Δ_t[c] · B_t[n]              (Euler; full ZOH optional)
//! h_t   = ā_t h_{t−1} + b̄_t x_t[c]
//! y_t   = Σ_n C_t[n] h_t[c,n] + d[c] x_t[c]
//! ```

use rand::Rng;

use crate::error::{dim_err, Error, Result};
use crate::numerics::ops::{softplus, softplus_inv};
use crate::numerics::{CustomBackward, Graph, ParamId, ParamStore, Tensor, Var};

pub const DELTA_MIN: f64 = 1e-4;
pub const DELTA_MAX: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Discretizes one (Δ, a, b) triple: `ā = exp(Δa)` and `b̄ = Δb`.
pub fn discretize(delta: f64, a: f64, b: f64) -> Result<(f64, f64)> {
    if !(delta > 0.0) {
        return Err(Error::Argument(format!("step size must be positive, got {delta}")));
    }
    Ok(((delta * a).exp(), delta * b))
}

/// Full zero-order hold for B as well: `b̄ = (exp(Δa) − 1)/a · b`.
pub fn discretize_zoh(delta: f64, a: f64, b: f64) -> Result<(f64, f64)> {
    if !(delta > 0.0) {
        return Err(Error::Argument(format!("step size must be positive, got {delta}")));
    }
    let a_bar = (delta * a).exp();
    let gain = if a == 0.0 { delta } else { (delta * a).exp_m1() / a };
    Ok((a_bar, gain * b))
}

/// Weights of one selective SSM (one scan direction).
#[derive(Clone, Debug, PartialEq)]
pub struct SelectiveSsmParams {
    /// `C×N`; the state matrix is `A = −exp(a_log)`.
    pub a_log: Tensor,
    pub w_delta: Tensor,
    pub b_delta: Tensor,
    pub w_b: Tensor,
    pub w_c: Tensor,
    pub d_skip: Tensor,
    pub zoh_b: bool,
}

impl SelectiveSsmParams {
    pub fn init<R: Rng + ?Sized>(c: usize, n: usize, rng: &mut R) -> Self {
        Self {
            a_log: init_a_log(c, n),
            w_delta: Tensor::fan_in_uniform(&[c, c], rng),
            b_delta: init_delta_bias(c),
            w_b: Tensor::fan_in_uniform(&[c, n], rng),
            w_c: Tensor::fan_in_uniform(&[c, n], rng),
            d_skip: Tensor::full(&[c], 1.0),
            zoh_b: false,
        }
    }

    pub fn channels(&self) -> usize {
        self.a_log.rows()
    }

    pub fn state_dim(&self) -> usize {
        self.a_log.cols()
    }

    /// Δ, B and C for every step of `x`.
    pub fn selection(&self, x: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        use crate::numerics::ops::linear;
        if x.cols() != self.channels() {
            return Err(dim_err("selective_scan", x.shape(), self.a_log.shape()));
        }
        let delta = linear(x, &self.w_delta, &self.b_delta)?.map(|v| softplus(v).clamp(DELTA_MIN, DELTA_MAX));
        let n = self.state_dim();
        let bm = linear(x, &self.w_b, &Tensor::zeros(&[n]))?;
        let cm = linear(x, &self.w_c, &Tensor::zeros(&[n]))?;
        Ok((delta, bm, cm))
    }
}

/// `−A` spans `[1, N]` geometrically along the state axis.
fn init_a_log(c: usize, n: usize) -> Tensor {
    let mut t = Tensor::zeros(&[c, n]);
    let ln_n = (n as f64).ln();
    for ch in 0..c {
        for s in 0..n {
            let frac = if n > 1 { s as f64 / (n - 1) as f64 } else { 0.0 };
            t.data_mut()[ch * n + s] = frac * ln_n;
        }
    }
    t
}

/// Initial Δ spread geometrically over `[1e-3, 1e-1]` across channels.
fn init_delta_bias(c: usize) -> Tensor {
    let data = (0..c)
        .map(|ch| {
            let frac = if c > 1 { ch as f64 / (c - 1) as f64 } else { 0.5 };
            softplus_inv((1e-3f64.ln() + frac * (1e-1f64.ln() - 1e-3f64.ln())).exp())
        })
        .collect();
    Tensor::new(vec![c], data).expect("len c")
}

fn time_index(step: usize, len: usize, dir: Direction) -> usize {
    match dir {
        Direction::Forward => step,
        Direction::Backward => len - 1 - step,
    }
}

/// Output of the raw scan kernel.
pub struct ScanTrace {
    pub y: Tensor,
    /// `L×C×N` states indexed by time position (empty unless requested).
    pub states: Vec<f64>,
}

/// The recurrence over precomputed Δ (L×C), B (L×N), C (L×N).
#[allow(clippy::too_many_arguments)]
pub fn scan_kernel(
    x: &Tensor,
    delta: &Tensor,
    bm: &Tensor,
    cm: &Tensor,
    a_log: &Tensor,
    d_skip: &Tensor,
    dir: Direction,
    zoh_b: bool,
    keep_states: bool,
) -> ScanTrace {
    let (l, c) = (x.rows(), x.cols());
    let n = a_log.cols();
    let a: Vec<f64> = a_log.data().iter().map(|v| -v.exp()).collect();
    let mut h = vec![0.0; c * n];
    let mut y = Tensor::zeros(&[l, c]);
    let mut states = if keep_states { vec![0.0; l * c * n] } else { Vec::new() };
    for step in 0..l {
        let t = time_index(step, l, dir);
        let (xr, dr, br, cr) = (x.row(t), delta.row(t), bm.row(t), cm.row(t));
        let yr = y.row_mut(t);
        for ch in 0..c {
            let dt = dr[ch];
            let xv = xr[ch];
            let hs = &mut h[ch * n..(ch + 1) * n];
            let ar = &a[ch * n..(ch + 1) * n];
            let mut acc = 0.0;
            for s in 0..n {
                let a_bar = (dt * ar[s]).exp();
                let gain = if zoh_b { (dt * ar[s]).exp_m1() / ar[s] } else { dt };
                hs[s] = a_bar * hs[s] + gain * br[s] * xv;
                acc += cr[s] * hs[s];
            }
            yr[ch] = acc + d_skip.data()[ch] * xv;
        }
        if keep_states {
            states[t * c * n..(t + 1) * c * n].copy_from_slice(&h);
        }
    }
    ScanTrace { y, states }
}

/// Sequential selective scan of `x` (L×C).
pub fn selective_scan(x: &Tensor, params: &SelectiveSsmParams, dir: Direction) -> Result<Tensor> {
    Ok(selective_scan_with_states(x, params, dir)?.y)
}

pub fn selective_scan_with_states(x: &Tensor, params: &SelectiveSsmParams, dir: Direction) -> Result<ScanTrace> {
    if x.rows() == 0 {
        return Err(Error::Argument("empty sequence".into()));
    }
    let (delta, bm, cm) = params.selection(x)?;
    Ok(scan_kernel(
        x,
        &delta,
        &bm,
        &cm,
        &params.a_log,
        &params.d_skip,
        dir,
        params.zoh_b,
        true,
    ))
}

/// Chunked evaluation: every chunk is scanned from a zero state together
/// with its cumulative decay, then the boundary states are carried across
/// chunks and folded in.
pub fn chunked_scan(x: &Tensor, params: &SelectiveSsmParams, chunk: usize, dir: Direction) -> Result<Tensor> {
    if chunk == 0 {
        return Err(Error::Argument("chunk size must be at least 1".into()));
    }
    if x.rows() == 0 {
        return Err(Error::Argument("empty sequence".into()));
    }
    let (delta, bm, cm) = params.selection(x)?;
    let (l, c, n) = (x.rows(), x.cols(), params.state_dim());
    let a: Vec<f64> = params.a_log.data().iter().map(|v| -v.exp()).collect();
    let d = params.d_skip.data();

    struct Local {
        states: Vec<f64>,
        decay: Vec<f64>,
    }
    // chunk-local pass; chunks are independent of each other here
    let locals: Vec<Local> = (0..l)
        .step_by(chunk)
        .map(|start| {
            let len = chunk.min(l - start);
            let mut h = vec![0.0; c * n];
            let mut p = vec![1.0; c * n];
            let mut states = vec![0.0; len * c * n];
            let mut decay = vec![0.0; len * c * n];
            for k in 0..len {
                let t = time_index(start + k, l, dir);
                let (xr, dr, br) = (x.row(t), delta.row(t), bm.row(t));
                for ch in 0..c {
                    for s in 0..n {
                        let i = ch * n + s;
                        let a_bar = (dr[ch] * a[i]).exp();
                        let gain = if params.zoh_b { (dr[ch] * a[i]).exp_m1() / a[i] } else { dr[ch] };
                        h[i] = a_bar * h[i] + gain * br[s] * xr[ch];
                        p[i] *= a_bar;
                    }
                }
                states[k * c * n..(k + 1) * c * n].copy_from_slice(&h);
                decay[k * c * n..(k + 1) * c * n].copy_from_slice(&p);
            }
            Local { states, decay }
        })
        .collect();

    let mut y = Tensor::zeros(&[l, c]);
    let mut carry = vec![0.0; c * n];
    for (ci, local) in locals.iter().enumerate() {
        let start = ci * chunk;
        let len = chunk.min(l - start);
        for k in 0..len {
            let t = time_index(start + k, l, dir);
            let (xr, cr) = (x.row(t), cm.row(t));
            let hs = &local.states[k * c * n..(k + 1) * c * n];
            let ps = &local.decay[k * c * n..(k + 1) * c * n];
            let yr = y.row_mut(t);
            for ch in 0..c {
                let mut acc = 0.0;
                for s in 0..n {
                    let i = ch * n + s;
                    acc += cr[s] * (hs[i] + ps[i] * carry[i]);
                }
                yr[ch] = acc + d[ch] * xr[ch];
            }
        }
        let last = (len - 1) * c * n;
        for i in 0..c * n {
            carry[i] = local.states[last + i] + local.decay[last + i] * carry[i];
        }
    }
    Ok(y)
}

struct ScanBackward {
    states: Vec<f64>,
    dir: Direction,
    zoh_b: bool,
}

impl CustomBackward for ScanBackward {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, gy: &Tensor) -> Vec<Option<Tensor>> {
        let (x, delta, bm, cm, a_log, d_skip) = (inputs[0], inputs[1], inputs[2], inputs[3], inputs[4], inputs[5]);
        let (l, c, n) = (x.rows(), x.cols(), a_log.cols());
        let a: Vec<f64> = a_log.data().iter().map(|v| -v.exp()).collect();
        let mut gx = Tensor::zeros(x.shape());
        let mut gdelta = Tensor::zeros(delta.shape());
        let mut gb = Tensor::zeros(bm.shape());
        let mut gc = Tensor::zeros(cm.shape());
        let mut ga = vec![0.0; c * n];
        let mut gd = vec![0.0; c];
        let mut gh = vec![0.0; c * n];
        let zeros = vec![0.0; c * n];
        for step in (0..l).rev() {
            let t = time_index(step, l, self.dir);
            let h_t = &self.states[t * c * n..(t + 1) * c * n];
            let h_prev: &[f64] = if step == 0 {
                &zeros
            } else {
                let tp = time_index(step - 1, l, self.dir);
                &self.states[tp * c * n..(tp + 1) * c * n]
            };
            let (xr, dr, br, cr, gyr) = (x.row(t), delta.row(t), bm.row(t), cm.row(t), gy.row(t));
            let mut gbr = vec![0.0; n];
            let mut gcr = vec![0.0; n];
            for ch in 0..c {
                let (dt, xv, g_out) = (dr[ch], xr[ch], gyr[ch]);
                gd[ch] += g_out * xv;
                let mut gxv = g_out * d_skip.data()[ch];
                let mut gdt = 0.0;
                for s in 0..n {
                    let i = ch * n + s;
                    gcr[s] += g_out * h_t[i];
                    let ghi = gh[i] + g_out * cr[s];
                    let ai = a[i];
                    let a_bar = (dt * ai).exp();
                    // h = ā h_prev + gain · B · x
                    let (gain, dgain_ddt, dgain_da) = if self.zoh_b {
                        let em1 = (dt * ai).exp_m1();
                        (em1 / ai, a_bar, (dt * ai * a_bar - em1) / (ai * ai))
                    } else {
                        (dt, 1.0, 0.0)
                    };
                    let g_abar = ghi * h_prev[i];
                    let bx = br[s] * xv;
                    gdt += g_abar * a_bar * ai + ghi * bx * dgain_ddt;
                    ga[i] += g_abar * a_bar * dt + ghi * bx * dgain_da;
                    gbr[s] += ghi * gain * xv;
                    gxv += ghi * gain * br[s];
                    gh[i] = ghi * a_bar;
                }
                gx.row_mut(t)[ch] += gxv;
                gdelta.row_mut(t)[ch] += gdt;
            }
            gb.row_mut(t).copy_from_slice(&gbr);
            gc.row_mut(t).copy_from_slice(&gcr);
        }
        // dA/da_log = A
        let ga_log: Vec<f64> = ga.iter().zip(&a).map(|(g, ai)| g * ai).collect();
        vec![
            Some(gx),
            Some(gdelta),
            Some(gb),
            Some(gc),
            Some(Tensor::new(a_log.shape().to_vec(), ga_log).unwrap()),
            Some(Tensor::new(d_skip.shape().to_vec(), gd).unwrap()),
        ]
    }
}

/// Tape op for the scan over precomputed selection tensors.
#[allow(clippy::too_many_arguments)]
pub fn scan_op(
    g: &mut Graph,
    x: Var,
    delta: Var,
    bm: Var,
    cm: Var,
    a_log: Var,
    d_skip: Var,
    dir: Direction,
    zoh_b: bool,
) -> Result<Var> {
    let (tx, td, tb, tc, ta, tdk) = (
        g.value(x),
        g.value(delta),
        g.value(bm),
        g.value(cm),
        g.value(a_log),
        g.value(d_skip),
    );
    let (l, c, n) = (tx.rows(), tx.cols(), ta.cols());
    if td.shape() != tx.shape() || tb.shape() != [l, n] || tc.shape() != [l, n] || ta.rows() != c || tdk.numel() != c
    {
        return Err(dim_err("scan", tx.shape(), ta.shape()));
    }
    let keep = g.recording();
    let trace = scan_kernel(tx, td, tb, tc, ta, tdk, dir, zoh_b, keep);
    g.add_macs((2 * l * c * n) as u64);
    let back = ScanBackward {
        states: trace.states,
        dir,
        zoh_b,
    };
    Ok(g.custom(vec![x, delta, bm, cm, a_log, d_skip], trace.y, Box::new(back)))
}

/// Parameter handles for one scan direction.
#[derive(Clone, Debug)]
pub struct SsmLayer {
    pub a_log: ParamId,
    pub w_delta: ParamId,
    pub b_delta: ParamId,
    pub w_b: ParamId,
    pub w_c: ParamId,
    pub d_skip: ParamId,
    pub zoh_b: bool,
}

impl SsmLayer {
    pub fn register(store: &mut ParamStore, prefix: &str, p: SelectiveSsmParams) -> Self {
        Self {
            a_log: store.add(format!("{prefix}.a_log"), p.a_log),
            w_delta: store.add(format!("{prefix}.w_delta"), p.w_delta),
            b_delta: store.add(format!("{prefix}.b_delta"), p.b_delta),
            w_b: store.add(format!("{prefix}.w_b"), p.w_b),
            w_c: store.add(format!("{prefix}.w_c"), p.w_c),
            d_skip: store.add(format!("{prefix}.d_skip"), p.d_skip),
            zoh_b: p.zoh_b,
        }
    }

    pub fn snapshot(&self, store: &ParamStore) -> SelectiveSsmParams {
        SelectiveSsmParams {
            a_log: store.get(self.a_log).clone(),
            w_delta: store.get(self.w_delta).clone(),
            b_delta: store.get(self.b_delta).clone(),
            w_b: store.get(self.w_b).clone(),
            w_c: store.get(self.w_c).clone(),
            d_skip: store.get(self.d_skip).clone(),
            zoh_b: self.zoh_b,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, dir: Direction) -> Result<Var> {
        let w_delta = g.param(store, self.w_delta);
        let b_delta = g.param(store, self.b_delta);
        let w_b = g.param(store, self.w_b);
        let w_c = g.param(store, self.w_c);
        let a_log = g.param(store, self.a_log);
        let d_skip = g.param(store, self.d_skip);
        let logits = g.linear(x, w_delta, b_delta)?;
        let sp = g.softplus(logits);
        let delta = g.clamp(sp, DELTA_MIN, DELTA_MAX);
        let bm = g.matmul(x, w_b)?;
        let cm = g.matmul(x, w_c)?;
        scan_op(g, x, delta, bm, cm, a_log, d_skip, dir, self.zoh_b)
    }
}

/// Both scan directions plus the fusing projection.
#[derive(Clone, Debug)]
pub struct BidirectionalMamba {
    pub fwd: SsmLayer,
    pub bwd: SsmLayer,
    pub w_fuse: ParamId,
    pub b_fuse: ParamId,
}

impl BidirectionalMamba {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        c: usize,
        n: usize,
        zoh_b: bool,
        rng: &mut R,
    ) -> Self {
        let mut pf = SelectiveSsmParams::init(c, n, rng);
        let mut pb = SelectiveSsmParams::init(c, n, rng);
        pf.zoh_b = zoh_b;
        pb.zoh_b = zoh_b;
        let fwd = SsmLayer::register(store, &format!("{prefix}.fwd"), pf);
        let bwd = SsmLayer::register(store, &format!("{prefix}.bwd"), pb);
        let w_fuse = store.add(format!("{prefix}.w_fuse"), Tensor::fan_in_uniform(&[c, c], rng));
        let b_fuse = store.add(format!("{prefix}.b_fuse"), Tensor::zeros(&[c]));
        Self { fwd, bwd, w_fuse, b_fuse }
    }

    /// `w_fuse(scan_fwd(x) + scan_bwd(x))`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        if g.value(x).rows() == 0 {
            return Err(Error::Argument("empty sequence".into()));
        }
        let yf = self.fwd.forward(g, store, x, Direction::Forward)?;
        let yb = self.bwd.forward(g, store, x, Direction::Backward)?;
        let sum = g.add(yf, yb)?;
        let w = g.param(store, self.w_fuse);
        let b = g.param(store, self.b_fuse);
        g.linear(sum, w, b)
    }
}

/// Tensor-level bidirectional context: `w_fuse(scan_fwd(x) + scan_bwd(x)) + b_fuse`.
pub fn bidirectional_context(
    x: &Tensor,
    params_fwd: &SelectiveSsmParams,
    params_bwd: &SelectiveSsmParams,
    w_fuse: &Tensor,
    b_fuse: &Tensor,
) -> Result<Tensor> {
    let yf = selective_scan(x, params_fwd, Direction::Forward)?;
    let yb = selective_scan(x, params_bwd, Direction::Backward)?;
    let sum = yf.zip_map(&yb, |a, b| a + b)?;
    crate::numerics::ops::linear(&sum, w_fuse, b_fuse)
}
