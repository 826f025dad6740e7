//! Point clouds, FPS + KNN grouping, and adjacency-preserving serialization.

mod ordering;
mod sampling;

pub use ordering::{
    affine_objective, apr, evolve_affine, path_length, xyz_order, AffineParams, AffineSearch, DEFAULT_BINS,
};
pub use sampling::{fps, knn_group, GroupedCloud};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub type Point = [f64; 3];

/// Ordered list of 3-D points.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Point>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Argument("point cloud must hold at least one point".into()));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite point coordinate".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bounds(&self) -> (Point, Point) {
        bounds(&self.points)
    }

    /// Centers the bounding box at the origin and scales so its largest
    /// half-extent is 1, i.e. the cloud fits in `[-1, 1]³`.
    pub fn normalized(&self) -> Self {
        let (lo, hi) = self.bounds();
        let center = [0, 1, 2].map(|a| 0.5 * (lo[a] + hi[a]));
        let half = (0..3).map(|a| 0.5 * (hi[a] - lo[a])).fold(0.0, f64::max);
        let s = if half > 0.0 { 1.0 / half } else { 1.0 };
        let points = self
            .points
            .iter()
            .map(|p| [0, 1, 2].map(|a| (p[a] - center[a]) * s))
            .collect();
        Self { points }
    }

    pub fn translated(&self, t: Point) -> Self {
        Self {
            points: self.points.iter().map(|p| [p[0] + t[0], p[1] + t[1], p[2] + t[2]]).collect(),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        let data = self.points.iter().flatten().copied().collect();
        Tensor::new(vec![self.points.len(), 3], data).expect("N×3")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.shape().len() != 2 || t.cols() != 3 {
            return Err(Error::Argument(format!("expected N×3 tensor, got {:?}", t.shape())));
        }
        Self::new(t.data().chunks(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    /// Parses whitespace-separated `x y z` lines; blank lines and `#`
    /// comments are skipped.
    pub fn parse_xyz(text: &str) -> Result<Self> {
        let mut points = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|e| Error::Argument(format!("line {}: {e}", ln + 1)))?;
            if vals.len() != 3 {
                return Err(Error::Argument(format!(
                    "line {}: expected 3 coordinates, got {}",
                    ln + 1,
                    vals.len()
                )));
            }
            points.push([vals[0], vals[1], vals[2]]);
        }
        Self::new(points)
    }

    /// One `x y z` line per point, shortest round-trip float formatting.
    pub fn to_xyz_string(&self) -> String {
        let mut s = String::with_capacity(self.points.len() * 48);
        for p in &self.points {
            s.push_str(&format!("{:?} {:?} {:?}\n", p[0], p[1], p[2]));
        }
        s
    }
}

pub(crate) fn bounds(points: &[Point]) -> (Point, Point) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    (lo, hi)
}

pub fn dist2(a: &Point, b: &Point) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}
