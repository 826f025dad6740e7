//! Tensor-level kernels shared by the tape and the forward-only paths.

use super::Tensor;
use crate::error::{dim_err, Error, Result};

/// `a (m×k) · b (k×n)`, raw slices.
pub fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a (m×n) · bᵀ` where `b` is `k×n`; result `m×k`.
pub fn matmul_nt_raw(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let brow = &b[j * n..(j + 1) * n];
            out[i * k + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `aᵀ · b` where `a` is `m×k` and `b` is `m×n`; result `k×n`.
pub fn matmul_tn_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.cols() != b.rows() {
        return Err(dim_err("matmul", a.shape(), b.shape()));
    }
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    Tensor::new(vec![m, n], matmul_raw(a.data(), b.data(), m, k, n))
}

/// `out[l,d] = Σ_c input[l,c]·weight[c,d] + bias[d]`.
pub fn linear(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let mut out = matmul(input, weight)?;
    add_row_bias_in_place(&mut out, bias)?;
    Ok(out)
}

pub(crate) fn add_row_bias_in_place(x: &mut Tensor, bias: &Tensor) -> Result<()> {
    let d = x.cols();
    if bias.numel() != d {
        return Err(dim_err("add_bias", x.shape(), bias.shape()));
    }
    let b = bias.data().to_vec();
    for row in x.data_mut().chunks_mut(d) {
        for (v, bv) in row.iter_mut().zip(&b) {
            *v += bv;
        }
    }
    Ok(())
}

/// Row-wise softmax, max-subtracted.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    if logits.data().iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("NaN in softmax input".into()));
    }
    let k = logits.cols();
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k) {
        softmax_in_place(row);
    }
    Ok(out)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Layer norm output plus the normalized activations and per-row inverse
/// standard deviations needed for the backward pass.
pub struct LayerNormOut {
    pub out: Tensor,
    pub xhat: Tensor,
    pub rstd: Vec<f64>,
}

pub fn layer_norm_full(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<LayerNormOut> {
    let c = x.cols();
    if c == 0 {
        return Err(Error::Argument("layer_norm needs C >= 1".into()));
    }
    if gamma.numel() != c || beta.numel() != c {
        return Err(dim_err("layer_norm", x.shape(), gamma.shape()));
    }
    let mut out = x.clone();
    let mut xhat = x.clone();
    let mut rstd = Vec::with_capacity(x.rows());
    let (g, b) = (gamma.data(), beta.data());
    for (orow, hrow) in out.data_mut().chunks_mut(c).zip(xhat.data_mut().chunks_mut(c)) {
        let mean = hrow.iter().sum::<f64>() / c as f64;
        let var = hrow.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let r = 1.0 / (var + eps).sqrt();
        rstd.push(r);
        for j in 0..c {
            hrow[j] = (hrow[j] - mean) * r;
            orow[j] = hrow[j] * g[j] + b[j];
        }
    }
    Ok(LayerNormOut { out, xhat, rstd })
}

/// Per row: `(x − mean)/sqrt(var + eps)`, then `gamma ⊙ · + beta`.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    Ok(layer_norm_full(x, gamma, beta, eps)?.out)
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn silu(v: f64) -> f64 {
    v * sigmoid(v)
}

pub fn silu_grad(v: f64) -> f64 {
    let s = sigmoid(v);
    s * (1.0 + v * (1.0 - s))
}

pub fn softplus(v: f64) -> f64 {
    if v > 30.0 {
        v
    } else {
        v.exp().ln_1p()
    }
}

/// `ln(exp(y) - 1)`, the inverse of softplus for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn linear_identity() {
        let i2 = Tensor::eye(2);
        let out = linear(&i2, &i2, &Tensor::zeros(&[2])).unwrap();
        assert_eq!(out, i2);
    }

    #[test]
    fn linear_zero_input_gives_bias_rows() {
        let w = t(&[&[0.3, -2.0, 1.0], &[4.0, 5.0, 6.0]]);
        let b = Tensor::new(vec![3], vec![1.5, -0.5, 2.0]).unwrap();
        let out = linear(&Tensor::zeros(&[4, 2]), &w, &b).unwrap();
        for i in 0..4 {
            assert_eq!(out.row(i), b.data());
        }
    }

    #[test]
    fn linear_hand_sum() {
        let out = linear(&t(&[&[1.0, 2.0]]), &t(&[&[1.0], &[1.0]]), &Tensor::zeros(&[1])).unwrap();
        assert_eq!(out.data(), &[3.0]);
    }

    #[test]
    fn linear_shape_mismatch_reports_both_shapes() {
        let err = linear(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 2]), &Tensor::zeros(&[2]))
            .unwrap_err();
        match err {
            Error::Dimension { lhs, rhs, .. } => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 2]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_rows(&t(&[&[0.0, 0.0], &[0.0, 3f64.ln()], &[1000.0, 0.0]])).unwrap();
        assert!((s.at(0, 0) - 0.5).abs() < 1e-15 && (s.at(0, 1) - 0.5).abs() < 1e-15);
        assert!((s.at(1, 0) - 0.25).abs() < 1e-15 && (s.at(1, 1) - 0.75).abs() < 1e-15);
        assert!((s.at(2, 0) - 1.0).abs() < 1e-15 && s.at(2, 1) < 1e-300);
        assert!(s.is_finite());
    }

    #[test]
    fn softmax_rejects_nan() {
        assert!(matches!(
            softmax_rows(&t(&[&[f64::NAN, 0.0]])),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn layer_norm_examples() {
        let ones = Tensor::full(&[2], 1.0);
        let zeros = Tensor::zeros(&[2]);
        let c = layer_norm(&t(&[&[3.0, 3.0]]), &ones, &zeros, 1e-5).unwrap();
        assert!(c.data().iter().all(|v| v.abs() < 1e-12));
        let n = layer_norm(&t(&[&[1.0, -1.0]]), &ones, &zeros, 1e-14).unwrap();
        assert!((n.at(0, 0) - 1.0).abs() < 1e-12 && (n.at(0, 1) + 1.0).abs() < 1e-12);
        let b = Tensor::new(vec![2], vec![0.7, -0.2]).unwrap();
        let a = layer_norm(&t(&[&[5.0, -9.0]]), &zeros, &b, 1e-5).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn softplus_roundtrip() {
        for y in [1e-4, 0.01, 0.5, 3.0, 40.0] {
            assert!((softplus(softplus_inv(y)) - y).abs() < 1e-12 * y.max(1.0));
        }
    }
}
