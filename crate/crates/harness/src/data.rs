//! Synthetic completion data: four primitive classes under random rotation
//! and scale, a half-space partial view, and a top-down projection.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mambatron::geometry::{Point, PointCloud};
use mambatron::objective::{project, Image};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{HarnessError, Result};

pub const GT_POINTS: usize = 512;
pub const PARTIAL_POINTS: usize = 256;
pub const TRAIN_PER_CLASS: usize = 64;
pub const TEST_PER_CLASS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ShapeClass {
    Sphere,
    Box,
    Cylinder,
    Cone,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 4] = [Self::Sphere, Self::Box, Self::Cylinder, Self::Cone];

    pub fn name(self) -> &'static str {
        match self {
            Self::Sphere => "sphere",
            Self::Box => "box",
            Self::Cylinder => "cylinder",
            Self::Cone => "cone",
        }
    }
}

impl fmt::Display for ShapeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeClass {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| HarnessError::Data(format!("unknown shape class `{s}`")))
    }
}

pub const SPHERE_RADIUS: f64 = 0.7;
pub const BOX_HALF: [f64; 3] = [0.6, 0.45, 0.3];
pub const CYLINDER_RADIUS: f64 = 0.45;
pub const CYLINDER_HALF_HEIGHT: f64 = 0.6;
pub const CONE_RADIUS: f64 = 0.55;
pub const CONE_HALF_HEIGHT: f64 = 0.6;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    pub class: ShapeClass,
    pub seed: u64,
    /// Rotation applied after scaling: `p = rotation · (scale · q)`.
    pub rotation: [[f64; 3]; 3],
    pub scale: f64,
    pub gt: PointCloud,
    pub partial: PointCloud,
    pub view: Image,
}

fn unit_vector<R: Rng>(rng: &mut R) -> Point {
    let z: f64 = rng.gen_range(-1.0..=1.0);
    let phi = rng.gen_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).max(0.0).sqrt();
    [r * phi.cos(), r * phi.sin(), z]
}

/// Uniform random rotation from a unit quaternion (Shoemake).
fn random_rotation<R: Rng>(rng: &mut R) -> [[f64; 3]; 3] {
    let (u1, u2, u3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
    let tau = std::f64::consts::TAU;
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (w, x, y, z) = (a * (tau * u2).sin(), a * (tau * u2).cos(), b * (tau * u3).sin(), b * (tau * u3).cos());
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

fn surface_point<R: Rng>(class: ShapeClass, rng: &mut R) -> Point {
    use std::f64::consts::{PI, TAU};
    match class {
        ShapeClass::Sphere => unit_vector(rng).map(|v| v * SPHERE_RADIUS),
        ShapeClass::Box => {
            let [a, b, c] = BOX_HALF;
            // face pairs weighted by area
            let areas = [b * c, a * c, a * b];
            let mut t = rng.gen_range(0.0..areas.iter().sum::<f64>());
            let mut axis = 0;
            while axis < 2 && t >= areas[axis] {
                t -= areas[axis];
                axis += 1;
            }
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let mut p = BOX_HALF.map(|h| rng.gen_range(-h..=h));
            p[axis] = sign * BOX_HALF[axis];
            p
        }
        ShapeClass::Cylinder => {
            let (r, h) = (CYLINDER_RADIUS, CYLINDER_HALF_HEIGHT);
            let side = TAU * r * 2.0 * h;
            let cap = PI * r * r;
            let phi = rng.gen_range(0.0..TAU);
            let t = rng.gen_range(0.0..side + 2.0 * cap);
            if t < side {
                [r * phi.cos(), r * phi.sin(), rng.gen_range(-h..=h)]
            } else {
                let rho = r * rng.gen::<f64>().sqrt();
                let z = if t < side + cap { h } else { -h };
                [rho * phi.cos(), rho * phi.sin(), z]
            }
        }
        ShapeClass::Cone => {
            let (r, h) = (CONE_RADIUS, CONE_HALF_HEIGHT);
            let slant = (r * r + 4.0 * h * h).sqrt();
            let side = PI * r * slant;
            let base = PI * r * r;
            let phi = rng.gen_range(0.0..TAU);
            if rng.gen_range(0.0..side + base) < side {
                // distance from the apex has density ∝ t
                let t = rng.gen::<f64>().sqrt();
                [t * r * phi.cos(), t * r * phi.sin(), h - 2.0 * h * t]
            } else {
                let rho = r * rng.gen::<f64>().sqrt();
                [rho * phi.cos(), rho * phi.sin(), -h]
            }
        }
    }
}

fn mat_vec(m: &[[f64; 3]; 3], p: &Point) -> Point {
    [0, 1, 2].map(|r| m[r][0] * p[0] + m[r][1] * p[1] + m[r][2] * p[2])
}

/// Maps a sample point back to the canonical, unscaled primitive frame.
pub fn canonical(sample: &SyntheticSample, p: &Point) -> Point {
    let r = &sample.rotation;
    // Rᵀ p / s
    [0, 1, 2].map(|c| (r[0][c] * p[0] + r[1][c] * p[1] + r[2][c] * p[2]) / sample.scale)
}

/// Deterministic sample for `(class, seed)`.
///
/// The partial cloud keeps the points on the positive side of a random plane
/// through the centroid: a random subset of 256 of them, or all of them
/// topped up with repeated picks when fewer than 256 qualify.
pub fn gen_shape(class: ShapeClass, seed: u64) -> Result<SyntheticSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rotation = random_rotation(&mut rng);
    let scale = rng.gen_range(0.8..=1.2);
    let points: Vec<Point> = (0..GT_POINTS)
        .map(|_| mat_vec(&rotation, &surface_point(class, &mut rng).map(|v| v * scale)))
        .collect();
    let n = points.len() as f64;
    let centroid = [0, 1, 2].map(|a| points.iter().map(|p| p[a]).sum::<f64>() / n);
    let normal = unit_vector(&mut rng);
    let positive: Vec<usize> = (0..points.len())
        .filter(|&i| (0..3).map(|a| (points[i][a] - centroid[a]) * normal[a]).sum::<f64>() > 0.0)
        .collect();
    if positive.is_empty() {
        return Err(HarnessError::Data("cutting plane left no points".into()));
    }
    let mut keep: Vec<usize> = if positive.len() >= PARTIAL_POINTS {
        sample(&mut rng, positive.len(), PARTIAL_POINTS).into_iter().map(|i| positive[i]).collect()
    } else {
        let mut k = positive.clone();
        while k.len() < PARTIAL_POINTS {
            k.push(positive[rng.gen_range(0..positive.len())]);
        }
        k
    };
    keep.sort_unstable();
    let partial = PointCloud::new(keep.iter().map(|&i| points[i]).collect())?;
    let gt = PointCloud::new(points)?;
    let view = project(&gt, mambatron::objective::DEFAULT_GRID, mambatron::objective::DEFAULT_SIGMA)?;
    Ok(SyntheticSample {
        class,
        seed,
        rotation,
        scale,
        gt,
        partial,
        view,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<SyntheticSample>,
    pub test: Vec<SyntheticSample>,
}

fn sample_seed(base: u64, split: Split, class: ShapeClass, i: usize) -> u64 {
    let s = match split {
        Split::Train => 0u64,
        Split::Test => 1,
    };
    let c = ShapeClass::ALL.iter().position(|&x| x == class).unwrap() as u64;
    // distinct, well-mixed seeds per (split, class, index)
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream((s << 40) | (c << 32) | i as u64);
    rng.gen()
}

impl Dataset {
    pub fn generate(seed: u64) -> Result<Self> {
        Self::generate_sized(seed, TRAIN_PER_CLASS, TEST_PER_CLASS)
    }

    /// Class-interleaved splits: sample `i` has class `ALL[i % 4]`.
    pub fn generate_sized(seed: u64, train_per_class: usize, test_per_class: usize) -> Result<Self> {
        let build = |split: Split, per_class: usize| -> Result<Vec<SyntheticSample>> {
            (0..per_class * 4)
                .into_par_iter()
                .map(|i| {
                    let class = ShapeClass::ALL[i % 4];
                    gen_shape(class, sample_seed(seed, split, class, i / 4))
                })
                .collect()
        };
        Ok(Self {
            train: build(Split::Train, train_per_class)?,
            test: build(Split::Test, test_per_class)?,
        })
    }

    pub fn split(&self, split: Split) -> &[SyntheticSample] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    /// Writes `manifest.csv` plus `{split}/{index}_{gt,partial}.xyz` and
    /// `{split}/{index}_view.pgm`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut man = csv::Writer::from_path(dir_create(dir)?.join("manifest.csv"))?;
        man.write_record(["split", "index", "class", "seed", "scale"])?;
        for split in [Split::Train, Split::Test] {
            let sub = dir_create(&dir.join(split.name()))?;
            for (i, s) in self.split(split).iter().enumerate() {
                man.write_record([
                    split.name().to_string(),
                    i.to_string(),
                    s.class.to_string(),
                    s.seed.to_string(),
                    format!("{:?}", s.scale),
                ])?;
                std::fs::write(sub.join(format!("{i:04}_gt.xyz")), s.gt.to_xyz_string())?;
                std::fs::write(sub.join(format!("{i:04}_partial.xyz")), s.partial.to_xyz_string())?;
                s.view.write_pgm(std::fs::File::create(sub.join(format!("{i:04}_view.pgm")))?)?;
            }
        }
        man.flush()?;
        Ok(())
    }

    /// Reads a directory written by [`Dataset::write`]. Clouds come from the
    /// xyz files; the view is re-rendered from the ground truth at full
    /// precision (the PGM is 8-bit) and the rotation from the seed.
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.csv");
        let mut man = csv::Reader::from_path(&path)
            .map_err(|e| HarnessError::Data(format!("cannot open {}: {e}", path.display())))?;
        let mut out = Self {
            train: Vec::new(),
            test: Vec::new(),
        };
        for rec in man.records() {
            let rec = rec.map_err(|e| HarnessError::Data(format!("manifest: {e}")))?;
            if rec.len() != 5 {
                return Err(HarnessError::Data(format!("manifest row has {} fields", rec.len())));
            }
            let split = match &rec[0] {
                "train" => Split::Train,
                "test" => Split::Test,
                s => return Err(HarnessError::Data(format!("unknown split `{s}`"))),
            };
            let idx: usize = parse_field(&rec[1], "index")?;
            let class: ShapeClass = rec[2].parse()?;
            let seed: u64 = parse_field(&rec[3], "seed")?;
            let scale: f64 = parse_field(&rec[4], "scale")?;
            let sub = dir.join(split.name());
            let gt = read_cloud(&sub.join(format!("{idx:04}_gt.xyz")))?;
            let partial = read_cloud(&sub.join(format!("{idx:04}_partial.xyz")))?;
            if gt.len() != GT_POINTS || partial.len() != PARTIAL_POINTS {
                return Err(HarnessError::Data(format!(
                    "{} sample {idx}: expected {GT_POINTS}/{PARTIAL_POINTS} points, got {}/{}",
                    split.name(),
                    gt.len(),
                    partial.len()
                )));
            }
            let view = project(&gt, mambatron::objective::DEFAULT_GRID, mambatron::objective::DEFAULT_SIGMA)?;
            let rotation = random_rotation(&mut ChaCha8Rng::seed_from_u64(seed));
            let s = SyntheticSample {
                class,
                seed,
                rotation,
                scale,
                gt,
                partial,
                view,
            };
            let list = match split {
                Split::Train => &mut out.train,
                Split::Test => &mut out.test,
            };
            if idx != list.len() {
                return Err(HarnessError::Data(format!("{} manifest out of order at {idx}", split.name())));
            }
            list.push(s);
        }
        if out.train.is_empty() && out.test.is_empty() {
            return Err(HarnessError::Data(format!("{} lists no samples", path.display())));
        }
        Ok(out)
    }
}

fn dir_create(dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    Ok(dir.to_path_buf())
}

fn parse_field<T: FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| HarnessError::Data(format!("manifest: bad {what} `{s}`")))
}

pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Data(format!("cannot read {}: {e}", path.display())))?;
    PointCloud::parse_xyz(&text).map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))
}
