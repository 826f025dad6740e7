//! Held-out evaluation: per-class Chamfer (×10³) and F-score of the
//! completions, next to the partial-input baseline.

use std::path::Path;

use mambatron::geometry::PointCloud;
use mambatron::objective::{chamfer_metric, fscore};
use rayon::prelude::*;

use crate::data::{ShapeClass, SyntheticSample};
use crate::error::{HarnessError, Result};
use crate::train::Trained;

pub const EVAL_HEADER: [&str; 5] = ["class", "cd_e3", "fscore", "baseline_cd_e3", "n"];

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub class: String,
    pub cd_e3: f64,
    pub fscore: f64,
    pub baseline_cd_e3: f64,
    pub n: usize,
}

/// One scored sample: `(class, prediction, ground truth, partial input)`.
pub type Scored<'a> = (ShapeClass, PointCloud, &'a PointCloud, &'a PointCloud);

/// Rows per class present, then a `mean` row over all samples.
pub fn evaluate_predictions(items: &[Scored<'_>], d: f64) -> Result<Vec<EvalRow>> {
    if items.is_empty() {
        return Err(HarnessError::Data("nothing to evaluate".into()));
    }
    let per: Vec<(ShapeClass, [f64; 3])> = items
        .par_iter()
        .map(|(c, pred, gt, partial)| {
            Ok((
                *c,
                [chamfer_metric(pred, gt)?, fscore(pred, gt, d), chamfer_metric(partial, gt)?],
            ))
        })
        .collect::<Result<_>>()?;
    let row = |name: &str, sel: &dyn Fn(ShapeClass) -> bool| {
        let vals: Vec<&[f64; 3]> = per.iter().filter(|(c, _)| sel(*c)).map(|(_, v)| v).collect();
        let n = vals.len();
        let mean = |k: usize| vals.iter().map(|v| v[k]).sum::<f64>() / n as f64;
        EvalRow {
            class: name.to_string(),
            cd_e3: mean(0),
            fscore: mean(1),
            baseline_cd_e3: mean(2),
            n,
        }
    };
    let mut rows: Vec<EvalRow> = ShapeClass::ALL
        .iter()
        .filter(|&&c| per.iter().any(|(pc, _)| *pc == c))
        .map(|&c| row(c.name(), &|x| x == c))
        .collect();
    rows.push(row("mean", &|_| true));
    Ok(rows)
}

fn check_compatible(t: &Trained, samples: &[SyntheticSample]) -> Result<()> {
    let cfg = &t.config;
    for s in samples {
        if s.view.height() != cfg.grid || s.view.width() != cfg.grid {
            return Err(mambatron::Error::Checkpoint(format!(
                "checkpoint expects {0}×{0} views, data has {1}×{2}",
                cfg.grid,
                s.view.height(),
                s.view.width()
            ))
            .into());
        }
        if s.partial.len() < cfg.n_p.max(cfg.k) {
            return Err(mambatron::Error::Checkpoint(format!(
                "checkpoint needs at least {} input points, data has {}",
                cfg.n_p.max(cfg.k),
                s.partial.len()
            ))
            .into());
        }
    }
    Ok(())
}

/// Completes every sample's partial cloud and scores it against the ground
/// truth.
pub fn evaluate(t: &Trained, samples: &[SyntheticSample]) -> Result<Vec<EvalRow>> {
    check_compatible(t, samples)?;
    let preds: Vec<PointCloud> = samples
        .par_iter()
        .map(|s| t.complete(&s.partial, &s.view))
        .collect::<Result<_>>()?;
    let items: Vec<Scored<'_>> = samples
        .iter()
        .zip(preds)
        .map(|(s, p)| (s.class, p, &s.gt, &s.partial))
        .collect();
    evaluate_predictions(&items, t.config.fscore_d)
}

pub fn mean_row(rows: &[EvalRow]) -> &EvalRow {
    rows.last().expect("evaluation always ends with the mean row")
}

pub fn write_eval_csv(path: &Path, rows: &[EvalRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(EVAL_HEADER)?;
    for r in rows {
        w.write_record([
            r.class.clone(),
            format!("{:?}", r.cd_e3),
            format!("{:?}", r.fscore),
            format!("{:?}", r.baseline_cd_e3),
            r.n.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
