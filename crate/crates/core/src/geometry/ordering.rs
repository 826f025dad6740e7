//! Serialization of keypoints into a token order.
//!
//! `xyz_order` quantizes each axis into `g` bins over the keypoints' bounding
//! box and walks the bins x-major in a serpentine: y runs backwards on odd x
//! slabs and z runs backwards on odd rows, so consecutive bins always share a
//! face. `apr` applies an orthogonal transform first, which yields other
//! adjacency-respecting walks of the same points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{bounds, dist2, Point};
use crate::error::{Error, Result};

/// Default bins per axis for `xyz_order`.
pub const DEFAULT_BINS: usize = 4;

/// Affine map `p ↦ M p + t` applied to keypoints before ordering.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineParams {
    pub matrix: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl Default for AffineParams {
    fn default() -> Self {
        Self::identity()
    }
}

impl AffineParams {
    pub fn identity() -> Self {
        Self {
            matrix: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    pub fn from_matrix(matrix: [[f64; 3]; 3]) -> Self {
        Self {
            matrix,
            translation: [0.0; 3],
        }
    }

    pub fn det(&self) -> f64 {
        let m = &self.matrix;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn apply(&self, p: &Point) -> Point {
        let m = &self.matrix;
        [0, 1, 2].map(|r| m[r][0] * p[0] + m[r][1] * p[1] + m[r][2] * p[2] + self.translation[r])
    }

    fn compose_left(&self, r: &[[f64; 3]; 3]) -> Self {
        let m = &self.matrix;
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| r[i][k] * m[k][j]).sum();
            }
        }
        Self {
            matrix: out,
            translation: self.translation,
        }
    }

    /// Gram-Schmidt on the rows; keeps the orientation sign, so the result
    /// has |det| = 1.
    pub fn orthonormalized(&self) -> Self {
        let sign = self.det().signum();
        let mut rows = self.matrix;
        for i in 0..3 {
            for j in 0..i {
                let d: f64 = (0..3).map(|k| rows[i][k] * rows[j][k]).sum();
                for k in 0..3 {
                    rows[i][k] -= d * rows[j][k];
                }
            }
            let n = (0..3).map(|k| rows[i][k] * rows[i][k]).sum::<f64>().sqrt();
            for v in rows[i].iter_mut() {
                *v /= n;
            }
        }
        let mut out = Self {
            matrix: rows,
            translation: self.translation,
        };
        if out.det().signum() != sign && sign != 0.0 {
            for v in out.matrix[2].iter_mut() {
                *v = -*v;
            }
        }
        out
    }
}

fn quantize(v: f64, lo: f64, hi: f64, g: usize) -> usize {
    let span = hi - lo;
    if span <= 0.0 {
        return 0;
    }
    (((v - lo) / span * g as f64).floor() as isize).clamp(0, g as isize - 1) as usize
}

/// Serpentine x-major traversal of quantized keypoints. Ties keep the
/// original index order. Returns the visiting order (a permutation).
pub fn xyz_order(keypoints: &[Point], g: usize) -> Vec<usize> {
    let g = g.max(1);
    let (lo, hi) = bounds(keypoints);
    let mut keys: Vec<([usize; 3], usize)> = keypoints
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let q = [0, 1, 2].map(|a| quantize(p[a], lo[a], hi[a], g));
            let y = if q[0] % 2 == 0 { q[1] } else { g - 1 - q[1] };
            let row = q[0] * g + y;
            let z = if row % 2 == 0 { q[2] } else { g - 1 - q[2] };
            ([q[0], y, z], i)
        })
        .collect();
    keys.sort_unstable();
    keys.into_iter().map(|(_, i)| i).collect()
}

/// Adjacency-preserving reordering: `xyz_order` of the transformed
/// keypoints. The keypoints themselves are untouched.
pub fn apr(keypoints: &[Point], affine: &AffineParams, g: usize) -> Result<Vec<usize>> {
    let det = affine.det();
    if det.abs() < 1e-8 {
        return Err(Error::DegenerateTransform(det.abs()));
    }
    let moved: Vec<Point> = keypoints.iter().map(|p| affine.apply(p)).collect();
    Ok(xyz_order(&moved, g))
}

/// Mean Euclidean distance between consecutive keypoints in `perm` order.
pub fn path_length(keypoints: &[Point], perm: &[usize]) -> f64 {
    if perm.len() < 2 {
        return 0.0;
    }
    let total: f64 = perm
        .windows(2)
        .map(|w| dist2(&keypoints[w[0]], &keypoints[w[1]]).sqrt())
        .sum();
    total / (perm.len() - 1) as f64
}

/// Mean `path_length` of the APR order over a batch of keypoint sets.
pub fn affine_objective(batch: &[Vec<Point>], affine: &AffineParams, g: usize) -> Result<f64> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for kp in batch {
        total += path_length(kp, &apr(kp, affine, g)?);
    }
    Ok(total / batch.len() as f64)
}

/// Outcome of [`evolve_affine`].
#[derive(Clone, Debug)]
pub struct AffineSearch {
    pub affine: AffineParams,
    /// Objective before the first step, then after every step.
    pub trace: Vec<f64>,
}

fn random_rotation<R: Rng>(rng: &mut R, max_angle: f64) -> [[f64; 3]; 3] {
    let mut axis: [f64; 3] = [0, 1, 2].map(|_| rng.sample(StandardNormal));
    let n = axis.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    axis.iter_mut().for_each(|v| *v /= n);
    let theta = rng.gen_range(-max_angle..=max_angle);
    let (s, c) = theta.sin_cos();
    let [x, y, z] = axis;
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

fn random_signed_permutation<R: Rng>(rng: &mut R) -> [[f64; 3]; 3] {
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let p = PERMS[rng.gen_range(0..6)];
    let mut m = [[0.0; 3]; 3];
    for (r, &c) in p.iter().enumerate() {
        m[r][c] = if rng.gen_bool(0.25) { -1.0 } else { 1.0 };
    }
    m
}

/// (1+λ) derivative-free search over orthogonal transforms minimizing
/// [`affine_objective`]. Each step proposes `candidates_per_step` transforms
/// composed onto the current one (small rotations, or occasionally a signed
/// axis permutation) and keeps the best only if it strictly improves, so the
/// trace never increases.
pub fn evolve_affine(
    batch: &[Vec<Point>],
    affine: &AffineParams,
    step_count: usize,
    candidates_per_step: usize,
    seed: u64,
    g: usize,
) -> Result<AffineSearch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = *affine;
    let mut best_obj = affine_objective(batch, &best, g)?;
    let mut trace = Vec::with_capacity(step_count + 1);
    trace.push(best_obj);
    for _ in 0..step_count {
        let mut step_best: Option<(AffineParams, f64)> = None;
        for _ in 0..candidates_per_step {
            let r = if rng.gen_bool(0.2) {
                random_signed_permutation(&mut rng)
            } else {
                random_rotation(&mut rng, 0.6)
            };
            let cand = best.compose_left(&r).orthonormalized();
            let obj = affine_objective(batch, &cand, g)?;
            if step_best.map_or(true, |(_, o)| obj < o) {
                step_best = Some((cand, obj));
            }
        }
        if let Some((cand, obj)) = step_best {
            if obj < best_obj {
                best = cand;
                best_obj = obj;
            }
        }
        trace.push(best_obj);
    }
    Ok(AffineSearch { affine: best, trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_point_example() {
        let kp = [[1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        assert_eq!(xyz_order(&kp, 1000), vec![1, 2, 0]);
    }

    #[test]
    fn single_point_and_single_bin() {
        assert_eq!(xyz_order(&[[0.3, 0.2, 0.1]], 32), vec![0]);
        let kp = [[0.3, 0.2, 0.1], [-1.0, 0.5, 0.0], [0.9, -0.9, 0.4]];
        assert_eq!(xyz_order(&kp, 1), vec![0, 1, 2]);
    }

    #[test]
    fn singular_affine_is_rejected() {
        let a = AffineParams::from_matrix([[1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]);
        assert!(matches!(apr(&[[0.0; 3]], &a, 4), Err(Error::DegenerateTransform(_))));
    }

    #[test]
    fn path_length_examples() {
        let kp: Vec<Point> = (0..5).map(|i| [0.25 * i as f64, 0.0, 0.0]).collect();
        assert!((path_length(&kp, &[0, 1, 2, 3, 4]) - 0.25).abs() < 1e-15);
        assert_eq!(path_length(&kp[..1], &[0]), 0.0);
    }

    #[test]
    fn orthonormalized_keeps_orientation() {
        let a = AffineParams::from_matrix([[1.1, 0.1, 0.0], [0.0, -0.9, 0.2], [0.1, 0.0, 1.3]]);
        let o = a.orthonormalized();
        assert!((o.det() - a.det().signum()).abs() < 1e-12);
    }
}
