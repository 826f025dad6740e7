use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

pub const DEFAULT_FD_EPS: f64 = 1e-5;

/// Central-difference check of `analytic` against `f` at `params`.
///
/// Returns `max_i |analytic_i − numeric_i| / max(1, |analytic_i|)` over the
/// coordinates in `coords` (all coordinates when `None`).
pub fn finite_diff_check<F>(
    mut f: F,
    params: &[f64],
    analytic: &[f64],
    eps: f64,
    coords: Option<&[usize]>,
) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if analytic.len() != params.len() {
        return Err(Error::Contract(format!(
            "{} analytic gradients for {} parameters",
            analytic.len(),
            params.len()
        )));
    }
    let a = f(params);
    let b = f(params);
    if a.to_bits() != b.to_bits() {
        return Err(Error::Contract(format!(
            "function is not deterministic: {a:e} then {b:e}"
        )));
    }
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..params.len()).collect();
            &all
        }
    };
    let mut x = params.to_vec();
    let mut worst: f64 = 0.0;
    for &i in coords {
        let orig = x[i];
        x[i] = orig + eps;
        let fp = f(&x);
        x[i] = orig - eps;
        let fm = f(&x);
        x[i] = orig;
        let numeric = (fp - fm) / (2.0 * eps);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        if err.is_nan() {
            return Err(Error::Numeric(format!("NaN gradient error at coordinate {i}")));
        }
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Gradient check of a tape-built scalar function of several input tensors.
///
/// `build` receives fresh leaves for `inputs` and returns the loss node.
pub fn check_graph_fn<F>(inputs: &[Tensor], build: F, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = build(&mut g, &leaves)?;
    let grads = g.backward(loss)?;
    let mut analytic = Vec::new();
    for (&v, t) in leaves.iter().zip(inputs) {
        match grads.wrt(v) {
            Some(gt) => analytic.extend_from_slice(gt.data()),
            None => analytic.extend(std::iter::repeat(0.0).take(t.numel())),
        }
    }
    let flat: Vec<f64> = inputs.iter().flat_map(|t| t.data().iter().copied()).collect();
    let eval = |x: &[f64]| -> f64 {
        let mut g = Graph::inference();
        let mut off = 0;
        let mut vs = Vec::with_capacity(inputs.len());
        for t in inputs {
            let n = t.numel();
            let tt = Tensor::new(t.shape().to_vec(), x[off..off + n].to_vec()).expect("shape");
            off += n;
            vs.push(g.leaf(tt));
        }
        match build(&mut g, &vs) {
            Ok(l) => g.value(l).item(),
            Err(_) => f64::NAN,
        }
    };
    finite_diff_check(eval, &flat, &analytic, eps, None)
}
