//! Differentiable top-down splatting of a point cloud onto a G×G grid.
//!
//! The grid spans `[-1, 1]²`: x runs along columns, y up the rows (row 0 is
//! y = 1), z is dropped. Each point deposits a Gaussian of `sigma` pixels,
//! normalized to unit mass and cut off smoothly at 4σ, and a pixel reads
//! `1 − exp(−mass)`.

use std::f64::consts::PI;

use super::Image;
use crate::error::{dim_err, Error, Result};
use crate::geometry::PointCloud;
use crate::numerics::{CustomBackward, Graph, Tensor, Var};

pub const DEFAULT_GRID: usize = 32;
pub const DEFAULT_SIGMA: f64 = 1.5;

#[derive(Clone, Copy, Debug)]
struct Splat {
    grid: usize,
    sigma: f64,
}

impl Splat {
    fn new(grid: usize, sigma: f64) -> Result<Self> {
        if grid == 0 {
            return Err(Error::Argument("projection grid must be at least 1".into()));
        }
        if !(sigma > 0.0) {
            return Err(Error::Argument(format!("splat width must be positive, got {sigma}")));
        }
        Ok(Self { grid, sigma })
    }

    /// Calls `f(pixel, weight, d weight/dx, d weight/dy)` for every pixel the
    /// point reaches.
    fn for_each(&self, x: f64, y: f64, mut f: impl FnMut(usize, f64, f64, f64)) {
        let h = 2.0 / self.grid as f64;
        let s2 = self.sigma * self.sigma;
        let radius = 4.0 * self.sigma;
        let floor = (-radius * radius / (2.0 * s2)).exp();
        let norm = 1.0 / (2.0 * PI * s2);
        let u = (x + 1.0) / h - 0.5;
        let v = (1.0 - y) / h - 0.5;
        let span = |center: f64| {
            let lo = (center - radius).ceil().max(0.0);
            let hi = (center + radius).floor().min(self.grid as f64 - 1.0);
            (lo as isize, hi as isize)
        };
        let (c0, c1) = span(u);
        let (r0, r1) = span(v);
        for r in r0..=r1 {
            let dv = r as f64 - v;
            for c in c0..=c1 {
                let du = c as f64 - u;
                let e = (-(du * du + dv * dv) / (2.0 * s2)).exp();
                if e <= floor {
                    continue;
                }
                let w = (e - floor) * norm;
                let dx = e * norm * du / (s2 * h);
                let dy = -e * norm * dv / (s2 * h);
                f(r as usize * self.grid + c as usize, w, dx, dy);
            }
        }
    }

    fn render(&self, pts: &[f64]) -> Vec<f64> {
        let mut mass = vec![0.0; self.grid * self.grid];
        for p in pts.chunks_exact(3) {
            self.for_each(p[0], p[1], |i, w, _, _| mass[i] += w);
        }
        mass.iter().map(|m| 1.0 - (-m).exp()).collect()
    }
}

/// Renders `cloud` with the default camera.
pub fn project(cloud: &PointCloud, grid: usize, sigma: f64) -> Result<Image> {
    let splat = Splat::new(grid, sigma)?;
    Image::new(grid, grid, splat.render(cloud.to_tensor().data()))
}

struct ProjectBackward {
    splat: Splat,
}

impl CustomBackward for ProjectBackward {
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, gout: &Tensor) -> Vec<Option<Tensor>> {
        let pts = inputs[0];
        // d pixel / d mass = exp(−mass) = 1 − pixel
        let gm: Vec<f64> = gout.data().iter().zip(output.data()).map(|(g, p)| g * (1.0 - p)).collect();
        let mut gp = Tensor::zeros(pts.shape());
        for i in 0..pts.rows() {
            let (x, y) = (pts.at(i, 0), pts.at(i, 1));
            let (mut ax, mut ay) = (0.0, 0.0);
            self.splat.for_each(x, y, |k, _, dx, dy| {
                ax += gm[k] * dx;
                ay += gm[k] * dy;
            });
            let row = gp.row_mut(i);
            row[0] = ax;
            row[1] = ay;
        }
        vec![Some(gp)]
    }
}

/// Tape version of [`project`] on an N×3 variable; yields a G×G image.
pub fn project_op(g: &mut Graph, pts: Var, grid: usize, sigma: f64) -> Result<Var> {
    let splat = Splat::new(grid, sigma)?;
    let t = g.value(pts);
    if t.shape().len() != 2 || t.cols() != 3 {
        return Err(dim_err("project", t.shape(), &[0, 3]));
    }
    let out = Tensor::new(vec![grid, grid], splat.render(t.data()))?;
    let window = (8.0 * sigma + 1.0).powi(2) as u64;
    g.add_macs(t.rows() as u64 * window);
    Ok(g.custom(vec![pts], out, Box::new(ProjectBackward { splat })))
}
