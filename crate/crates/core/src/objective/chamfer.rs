//! Chamfer distance and F-score.

use crate::error::{dim_err, Error, Result};
use crate::geometry::{dist2, PointCloud};
use crate::numerics::{CustomBackward, Graph, Tensor, Var};

/// For every row of `a`, the nearest row of `b` (lowest index on ties) and
/// the squared distance to it.
fn nearest(a: &[f64], b: &[f64]) -> Vec<(usize, f64)> {
    a.chunks_exact(3)
        .map(|p| {
            let mut best = (0, f64::INFINITY);
            for (j, q) in b.chunks_exact(3).enumerate() {
                let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                if d < best.1 {
                    best = (j, d);
                }
            }
            best
        })
        .collect()
}

fn check_pair(a: &Tensor, b: &Tensor) -> Result<()> {
    for t in [a, b] {
        if t.shape().len() != 2 || t.cols() != 3 {
            return Err(dim_err("chamfer", a.shape(), b.shape()));
        }
        if t.rows() == 0 {
            return Err(Error::Argument("chamfer of an empty cloud".into()));
        }
    }
    Ok(())
}

/// Sum over both directions of squared nearest-neighbour distances.
pub fn chamfer(p1: &PointCloud, p2: &PointCloud) -> Result<f64> {
    if p1.is_empty() || p2.is_empty() {
        return Err(Error::Argument("chamfer of an empty cloud".into()));
    }
    let (a, b) = (p1.to_tensor(), p2.to_tensor());
    let fwd: f64 = nearest(a.data(), b.data()).iter().map(|x| x.1).sum();
    let bwd: f64 = nearest(b.data(), a.data()).iter().map(|x| x.1).sum();
    Ok(fwd + bwd)
}

/// Mean squared nearest-neighbour distance per direction, summed, ×10³.
pub fn chamfer_metric(p1: &PointCloud, p2: &PointCloud) -> Result<f64> {
    if p1.is_empty() || p2.is_empty() {
        return Err(Error::Argument("chamfer of an empty cloud".into()));
    }
    let (a, b) = (p1.to_tensor(), p2.to_tensor());
    let fwd: f64 = nearest(a.data(), b.data()).iter().map(|x| x.1).sum::<f64>() / p1.len() as f64;
    let bwd: f64 = nearest(b.data(), a.data()).iter().map(|x| x.1).sum::<f64>() / p2.len() as f64;
    Ok((fwd + bwd) * 1e3)
}

/// Whether the F-score threshold compares squared or plain distances.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Threshold {
    #[default]
    Squared,
    Plain,
}

/// F-score with the squared-distance threshold `d`.
pub fn fscore(p_out: &PointCloud, p_gt: &PointCloud, d: f64) -> f64 {
    fscore_with(p_out, p_gt, d, Threshold::Squared)
}

pub fn fscore_with(p_out: &PointCloud, p_gt: &PointCloud, d: f64, mode: Threshold) -> f64 {
    let limit = match mode {
        Threshold::Squared => d,
        Threshold::Plain => d * d,
    };
    let frac_within = |from: &PointCloud, to: &PointCloud| {
        let hits = from
            .points()
            .iter()
            .filter(|p| to.points().iter().any(|q| dist2(p, q) <= limit))
            .count();
        hits as f64 / from.len() as f64
    };
    let precision = frac_within(p_out, p_gt);
    let recall = frac_within(p_gt, p_out);
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

struct ChamferBackward {
    ab: Vec<(usize, f64)>,
    ba: Vec<(usize, f64)>,
}

impl CustomBackward for ChamferBackward {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, gout: &Tensor) -> Vec<Option<Tensor>> {
        let (a, b) = (inputs[0], inputs[1]);
        let g = gout.item();
        let mut ga = Tensor::zeros(a.shape());
        let mut gb = Tensor::zeros(b.shape());
        let pull = |from: &Tensor, to: &Tensor, nn: &[(usize, f64)], gf: &mut Tensor, gt: &mut Tensor| {
            for (i, &(j, _)) in nn.iter().enumerate() {
                for k in 0..3 {
                    let d = 2.0 * g * (from.at(i, k) - to.at(j, k));
                    gf.row_mut(i)[k] += d;
                    gt.row_mut(j)[k] -= d;
                }
            }
        };
        pull(a, b, &self.ab, &mut ga, &mut gb);
        pull(b, a, &self.ba, &mut gb, &mut ga);
        vec![Some(ga), Some(gb)]
    }
}

/// Tape version of [`chamfer`] on N×3 and M×3 variables. The gradient
/// follows the nearest neighbours chosen in the forward pass.
pub fn chamfer_op(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let (ta, tb) = (g.value(a), g.value(b));
    check_pair(ta, tb)?;
    let ab = nearest(ta.data(), tb.data());
    let ba = nearest(tb.data(), ta.data());
    let v = ab.iter().map(|x| x.1).sum::<f64>() + ba.iter().map(|x| x.1).sum::<f64>();
    let macs = 2 * 3 * ta.rows() * tb.rows();
    g.add_macs(macs as u64);
    Ok(g.custom(vec![a, b], Tensor::scalar(v), Box::new(ChamferBackward { ab, ba })))
}
