//! Two-stage training: the unimodal stage autoencodes complete clouds and
//! their projections from masked features, the cross-modal stage completes
//! partial clouds with the view.

use std::path::Path;

use mambatron::geometry::{apr, evolve_affine, fps, knn_group, AffineParams, GroupedCloud, Point, PointCloud};
use mambatron::model::{Checkpoint, MambaTron, Pass};
use mambatron::numerics::{clip_global_norm, cosine_lr, Graph, ParamStore, Sgd, Tensor};
use mambatron::objective::{chamfer_op, project_op, style_loss_op, Image, LossReport, Stage};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::data::{Dataset, SyntheticSample};
use crate::error::{HarnessError, Result};

pub const AFFINE_TENSOR: &str = "apr.affine";
/// Scalar tensor holding the last completed stage: 0 none, 1 uni, 2 cross.
pub const STAGE_TENSOR: &str = "train.stage";

/// Model, weights and ordering transform after (or before) training.
#[derive(Clone, Debug)]
pub struct Trained {
    pub config: RunConfig,
    pub model: MambaTron,
    pub store: ParamStore,
    pub affine: AffineParams,
    /// Last completed stage, if any.
    pub stage: Option<Stage>,
}

fn stage_code(s: Option<Stage>) -> f64 {
    match s {
        None => 0.0,
        Some(Stage::Uni) => 1.0,
        Some(Stage::Cross) => 2.0,
    }
}

/// One row of the per-epoch CSV; terms are means over the epoch's samples
/// and `total` is their stage sum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub report: LossReport,
    pub lr: f64,
}

pub fn affine_to_tensor(a: &AffineParams) -> Tensor {
    let mut d: Vec<f64> = a.matrix.iter().flatten().copied().collect();
    d.extend_from_slice(&a.translation);
    Tensor::new(vec![4, 3], d).expect("4×3")
}

pub fn affine_from_tensor(t: &Tensor) -> Result<AffineParams> {
    if t.shape() != [4, 3] {
        return Err(HarnessError::Data(format!("{AFFINE_TENSOR} has shape {:?}", t.shape())));
    }
    let r = |i: usize| [t.at(i, 0), t.at(i, 1), t.at(i, 2)];
    Ok(AffineParams {
        matrix: [r(0), r(1), r(2)],
        translation: r(3),
    })
}

impl Trained {
    pub fn init(config: &RunConfig) -> Result<Self> {
        let (model, store) = MambaTron::init(config.model_config(), config.seed)?;
        Ok(Self {
            config: config.clone(),
            model,
            store,
            affine: AffineParams::identity(),
            stage: None,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_store(self.config.to_map(), &self.store);
        ck.tensors.push((AFFINE_TENSOR.to_string(), affine_to_tensor(&self.affine)));
        ck.tensors.push((STAGE_TENSOR.to_string(), Tensor::scalar(stage_code(self.stage))));
        ck
    }

    /// Rebuilds the model from the checkpoint's own configuration.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config = RunConfig::from_map(&ck.config)?;
        Self::from_checkpoint_with(ck, &config)
    }

    /// Loads weights into a model built from `config`; shapes must agree.
    pub fn from_checkpoint_with(ck: &Checkpoint, config: &RunConfig) -> Result<Self> {
        let mut t = Self::init(config)?;
        ck.load_into(&mut t.store)?;
        let a = ck
            .get(AFFINE_TENSOR)
            .ok_or_else(|| HarnessError::Data(format!("checkpoint lacks {AFFINE_TENSOR}")))?;
        t.affine = affine_from_tensor(a)?;
        let code = ck.get(STAGE_TENSOR).map(|s| s.item());
        t.stage = [None, Some(Stage::Uni), Some(Stage::Cross)]
            .into_iter()
            .find(|&s| Some(stage_code(s)) == code)
            .ok_or_else(|| HarnessError::Data(format!("checkpoint lacks a valid {STAGE_TENSOR}")))?;
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(self.to_checkpoint().write(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read(path)?)
    }

    /// FPS + KNN groups of `cloud` in FPS order.
    pub fn base_groups(&self, cloud: &PointCloud) -> Result<GroupedCloud> {
        let idx = fps(cloud, self.config.n_p, 0)?;
        Ok(knn_group(cloud, &idx, self.config.k)?)
    }

    /// Applies the current serialization to FPS-ordered groups.
    pub fn serialize(&self, base: &GroupedCloud) -> Result<GroupedCloud> {
        if self.config.no_apr {
            return Ok(base.clone());
        }
        let order = apr(&base.keypoints, &self.affine, self.config.g)?;
        Ok(base.reordered(&order))
    }

    /// Completed cloud for a partial input and its view.
    pub fn complete(&self, partial: &PointCloud, view: &Image) -> Result<PointCloud> {
        let grouped = self.serialize(&self.base_groups(partial)?)?;
        let mut g = Graph::inference();
        let out = self.model.forward(&mut g, &self.store, &grouped, view, Pass::Cross, None)?;
        Ok(PointCloud::from_tensor(g.value(out.points))?)
    }
}

struct Prepared {
    base: GroupedCloud,
    target: Tensor,
    view: Image,
}

fn prepare(t: &Trained, samples: &[SyntheticSample], stage: Stage) -> Result<Vec<Prepared>> {
    samples
        .par_iter()
        .map(|s| {
            let input = match stage {
                Stage::Uni => &s.gt,
                Stage::Cross => &s.partial,
            };
            Ok(Prepared {
                base: t.base_groups(input)?,
                target: s.gt.to_tensor(),
                view: s.view.clone(),
            })
        })
        .collect()
}

fn mix_seed(seed: u64, epoch: usize, idx: usize) -> u64 {
    let mut z = seed ^ ((epoch as u64) << 32 | idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Loss terms `[cd, img2d, proj, style]` and the flat parameter gradient of
/// one sample.
fn sample_step(t: &Trained, p: &Prepared, stage: Stage, mask_seed: u64) -> Result<([f64; 4], Vec<f64>)> {
    let cfg = &t.config;
    let w = cfg.weights();
    let grouped = t.serialize(&p.base)?;
    let mut g = Graph::new();
    let (pass, mask) = match stage {
        Stage::Uni => (Pass::Uni, (cfg.mask_ratio > 0.0).then_some((cfg.mask_ratio, mask_seed))),
        Stage::Cross => (Pass::Cross, None),
    };
    let out = t.model.forward(&mut g, &t.store, &grouped, &p.view, pass, mask)?;
    let target = g.constant(p.target.clone());
    let view = g.constant(p.view.to_tensor());
    let cd = chamfer_op(&mut g, out.points, target)?;
    let img2d = g.mse(out.image, view)?;
    let mut terms = vec![(cd, w.cd), (img2d, w.img2d)];
    let (mut proj, mut style) = (None, None);
    match stage {
        Stage::Uni if w.proj != 0.0 => {
            let img = project_op(&mut g, out.points, cfg.grid, cfg.sigma)?;
            let v = g.mse(img, view)?;
            proj = Some(v);
            terms.push((v, w.proj));
        }
        Stage::Cross if w.style != 0.0 => {
            let f = out.features;
            let v = style_loss_op(&mut g, f.f_i, f.f_p, f.f_i_x, f.f_p_x, cfg.n_p, cfg.c)?;
            style = Some(v);
            terms.push((v, w.style));
        }
        _ => {}
    }
    let scaled: Vec<_> = terms.into_iter().map(|(v, s)| g.scale(v, s)).collect();
    let mut loss = scaled[0];
    for &v in &scaled[1..] {
        loss = g.add(loss, v)?;
    }
    let val = |v: Option<_>| v.map_or(0.0, |v| g.value(v).item());
    let vals = [g.value(cd).item(), g.value(img2d).item(), val(proj), val(style)];
    let grads = g.backward(loss)?;
    Ok((vals, grads.flatten_params(&t.store)))
}

/// Trains one stage in place and returns the per-epoch log. The cross stage
/// only runs on a model that has finished the unimodal stage.
pub fn train_stage(t: &mut Trained, stage: Stage, data: &Dataset) -> Result<Vec<EpochLog>> {
    if stage == Stage::Cross && t.stage.is_none() {
        return Err(HarnessError::Precondition(
            "cross-modal training needs a model trained by the unimodal stage".into(),
        ));
    }
    let cfg = t.config.clone();
    let samples: &[SyntheticSample] = match cfg.train_per_class {
        0 => &data.train,
        n => &data.train[..(4 * n).min(data.train.len())],
    };
    if samples.is_empty() {
        return Err(HarnessError::Data("no training samples".into()));
    }
    let prepared = prepare(t, samples, stage)?;
    let epochs = match stage {
        Stage::Uni => cfg.epochs,
        Stage::Cross => cfg.epochs_cross,
    };
    let steps_per_epoch = prepared.len().div_ceil(cfg.batch);
    let total_steps = epochs * steps_per_epoch;
    let stage_tag = match stage {
        Stage::Uni => 0,
        Stage::Cross => 1,
    };
    let mut opt = Sgd::new(&t.store, cfg.momentum);
    let mut log = Vec::with_capacity(epochs);
    let mut step = 0;
    let keypoints: Vec<Vec<Point>> = prepared.iter().map(|p| p.base.keypoints.clone()).collect();
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..prepared.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, epoch, stage_tag)));
        let mut sums = [0.0; 4];
        let mut lr = cosine_lr(cfg.lr, step, total_steps);
        for chunk in order.chunks(cfg.batch) {
            lr = cosine_lr(cfg.lr, step, total_steps);
            let results: Vec<([f64; 4], Vec<f64>)> = chunk
                .par_iter()
                .map(|&i| sample_step(t, &prepared[i], stage, mix_seed(cfg.seed ^ 0xA5A5, epoch, i)))
                .collect::<Result<_>>()?;
            let mut grad = vec![0.0; t.store.numel()];
            for (vals, gr) in &results {
                for (s, v) in sums.iter_mut().zip(vals) {
                    *s += v;
                }
                for (a, b) in grad.iter_mut().zip(gr) {
                    *a += b;
                }
            }
            let inv = 1.0 / chunk.len() as f64;
            grad.iter_mut().for_each(|v| *v *= inv);
            if grad.iter().any(|v| !v.is_finite()) {
                return Err(HarnessError::Numeric(format!("non-finite gradient in epoch {epoch}")));
            }
            clip_global_norm(&mut grad, cfg.clip);
            opt.step(&mut t.store, &grad, lr)?;
            step += 1;
        }
        let n = prepared.len() as f64;
        let [cd, img2d, proj, style] = sums.map(|s| s / n);
        let report = LossReport::new(stage, cd, img2d, proj, style, &cfg.weights());
        if !report.total.is_finite() {
            return Err(HarnessError::Numeric(format!("loss diverged in epoch {epoch}")));
        }
        log.push(EpochLog { epoch, report, lr });
        if cfg.evolves_affine() {
            let s = evolve_affine(
                &keypoints,
                &t.affine,
                cfg.affine_steps,
                cfg.affine_candidates,
                mix_seed(cfg.seed ^ 0x5A5A, epoch, stage_tag),
                cfg.g,
            )?;
            t.affine = s.affine;
        }
    }
    t.stage = Some(stage);
    Ok(log)
}

pub fn write_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "total", "cd", "img2d", "proj", "style", "lr"])?;
    for e in log {
        let r = &e.report;
        w.write_record([
            e.epoch.to_string(),
            format!("{:?}", r.total),
            format!("{:?}", r.cd),
            format!("{:?}", r.img2d),
            format!("{:?}", r.proj),
            format!("{:?}", r.style),
            format!("{:?}", e.lr),
        ])?;
    }
    w.flush()?;
    Ok(())
}
