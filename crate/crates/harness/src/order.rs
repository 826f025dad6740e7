//! Serialization orders of a point file, as used by the `order` command.

use std::path::Path;
use std::str::FromStr;

use mambatron::geometry::{apr, evolve_affine, fps, path_length, xyz_order, AffineParams, Point, PointCloud};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OrderMode {
    Xyz,
    Apr,
    Random,
}

impl FromStr for OrderMode {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xyz" => Ok(Self::Xyz),
            "apr" => Ok(Self::Apr),
            "random" => Ok(Self::Random),
            _ => Err(HarnessError::Usage(format!("unknown order mode `{s}`; expected xyz, apr or random"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrderOptions {
    /// FPS keypoints to order; 0 orders every point of the cloud.
    pub n_p: usize,
    pub bins: usize,
    pub seed: u64,
    /// APR transform; searched on the cloud itself when absent.
    pub affine: Option<AffineParams>,
    pub affine_steps: usize,
    pub affine_candidates: usize,
}

impl Default for OrderOptions {
    fn default() -> Self {
        Self {
            n_p: 0,
            bins: mambatron::geometry::DEFAULT_BINS,
            seed: 42,
            affine: None,
            affine_steps: 50,
            affine_candidates: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ordering {
    pub keypoints: Vec<Point>,
    pub perm: Vec<usize>,
    pub path_length: f64,
}

pub fn order_cloud(cloud: &PointCloud, mode: OrderMode, opts: &OrderOptions) -> Result<Ordering> {
    let keypoints: Vec<Point> = if opts.n_p == 0 || opts.n_p >= cloud.len() {
        cloud.points().to_vec()
    } else {
        fps(cloud, opts.n_p, 0)?.into_iter().map(|i| cloud.points()[i]).collect()
    };
    let perm = match mode {
        OrderMode::Xyz => xyz_order(&keypoints, opts.bins),
        OrderMode::Apr => {
            let affine = match opts.affine {
                Some(a) => a,
                None => {
                    let batch = [keypoints.clone()];
                    evolve_affine(
                        &batch,
                        &AffineParams::identity(),
                        opts.affine_steps,
                        opts.affine_candidates,
                        opts.seed,
                        opts.bins,
                    )?
                    .affine
                }
            };
            apr(&keypoints, &affine, opts.bins)?
        }
        OrderMode::Random => {
            let mut p: Vec<usize> = (0..keypoints.len()).collect();
            p.shuffle(&mut ChaCha8Rng::seed_from_u64(opts.seed));
            p
        }
    };
    let path_length = path_length(&keypoints, &perm);
    Ok(Ordering {
        keypoints,
        perm,
        path_length,
    })
}

/// Columns `index,perm,x,y,z`: row `i` is the point visited `i`-th.
pub fn write_order_csv(path: &Path, o: &Ordering) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["index", "perm", "x", "y", "z"])?;
    for (i, &p) in o.perm.iter().enumerate() {
        let k = o.keypoints[p];
        w.write_record([
            i.to_string(),
            p.to_string(),
            format!("{:?}", k[0]),
            format!("{:?}", k[1]),
            format!("{:?}", k[2]),
        ])?;
    }
    w.flush()?;
    Ok(())
}
