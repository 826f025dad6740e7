//! Losses and metrics for completion training and evaluation.

mod chamfer;
mod image;
mod projection;

pub use chamfer::{chamfer, chamfer_metric, chamfer_op, fscore, fscore_with, Threshold};
pub use image::Image;
pub use projection::{project, project_op, DEFAULT_GRID, DEFAULT_SIGMA};

use crate::error::{dim_err, Error, Result};
use crate::geometry::PointCloud;
use crate::model::FeatureSet;
use crate::numerics::ops::matmul;
use crate::numerics::{Graph, Tensor, Var};

/// `FᵀF`.
pub fn gram(f: &Tensor) -> Tensor {
    matmul(&f.transpose(), f).expect("FᵀF is always defined")
}

pub fn gram_op(g: &mut Graph, f: Var) -> Result<Var> {
    let ft = g.transpose(f);
    g.matmul(ft, f)
}

fn check_style_shapes(shapes: [&[usize]; 4], c: usize) -> Result<()> {
    for s in shapes {
        if s.len() != 2 || s[1] != c {
            return Err(Error::Argument(format!("feature shape {s:?} does not have {c} channels")));
        }
    }
    Ok(())
}

/// Squared Gram mismatch of intra image features against cross point
/// features, plus intra point against cross image, over `n_p·C`.
pub fn style_loss(fs: &FeatureSet, n_p: usize, c: usize) -> Result<f64> {
    check_style_shapes([fs.f_i.shape(), fs.f_p.shape(), fs.f_i_x.shape(), fs.f_p_x.shape()], c)?;
    let sq = |a: &Tensor, b: &Tensor| -> f64 {
        gram(a).data().iter().zip(gram(b).data()).map(|(x, y)| (x - y) * (x - y)).sum()
    };
    Ok((sq(&fs.f_i, &fs.f_p_x) + sq(&fs.f_p, &fs.f_i_x)) / (n_p * c) as f64)
}

pub fn style_loss_op(g: &mut Graph, f_i: Var, f_p: Var, f_i_x: Var, f_p_x: Var, n_p: usize, c: usize) -> Result<Var> {
    check_style_shapes([g.shape(f_i), g.shape(f_p), g.shape(f_i_x), g.shape(f_p_x)], c)?;
    let mut term = |a: Var, b: Var| -> Result<Var> {
        let (ga, gb) = (gram_op(g, a)?, gram_op(g, b)?);
        let d = g.sub(ga, gb)?;
        let sq = g.square(d);
        Ok(g.sum(sq))
    };
    let t1 = term(f_i, f_p_x)?;
    let t2 = term(f_p, f_i_x)?;
    let s = g.add(t1, t2)?;
    Ok(g.scale(s, 1.0 / (n_p * c) as f64))
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// MSE between the projection of `p_out` and a reference image.
pub fn proj_loss(p_out: &PointCloud, img_ref: &Image, grid: usize, sigma: f64) -> Result<f64> {
    if img_ref.height() != grid || img_ref.width() != grid {
        return Err(dim_err("proj_loss", &[grid, grid], &[img_ref.height(), img_ref.width()]));
    }
    let img = project(p_out, grid, sigma)?;
    Ok(mse(img.data(), img_ref.data()))
}

pub fn img2d_loss(img_out: &Image, img_ref: &Image) -> Result<f64> {
    if (img_out.height(), img_out.width()) != (img_ref.height(), img_ref.width()) {
        return Err(dim_err(
            "img2d_loss",
            &[img_out.height(), img_out.width()],
            &[img_ref.height(), img_ref.width()],
        ));
    }
    Ok(mse(img_out.data(), img_ref.data()))
}

pub fn loss_uni(cd: f64, img2d: f64, proj: f64) -> f64 {
    cd + img2d + proj
}

pub fn loss_cross(cd: f64, img2d: f64, style: f64) -> f64 {
    cd + img2d + style
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Uni,
    Cross,
}

/// Per-term multipliers; all 1 reproduces the plain sums.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub cd: f64,
    pub img2d: f64,
    pub proj: f64,
    pub style: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            cd: 1.0,
            img2d: 1.0,
            proj: 1.0,
            style: 1.0,
        }
    }
}

impl LossWeights {
    pub fn total(&self, stage: Stage, cd: f64, img2d: f64, proj: f64, style: f64) -> f64 {
        let (cd, img2d) = (self.cd * cd, self.img2d * img2d);
        match stage {
            Stage::Uni => loss_uni(cd, img2d, self.proj * proj),
            Stage::Cross => loss_cross(cd, img2d, self.style * style),
        }
    }
}

/// Loss terms of one step. Terms outside the stage are still reported but do
/// not enter `total`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub cd: f64,
    pub style: f64,
    pub proj: f64,
    pub img2d: f64,
    pub total: f64,
    pub stage: Stage,
}

impl LossReport {
    pub fn new(stage: Stage, cd: f64, img2d: f64, proj: f64, style: f64, weights: &LossWeights) -> Self {
        Self {
            cd,
            style,
            proj,
            img2d,
            total: weights.total(stage, cd, img2d, proj, style),
            stage,
        }
    }
}
