//! Baseline plus single-flag ablations trained on the same data and seed.

use std::path::Path;

use mambatron::objective::Stage;
use rayon::prelude::*;

use crate::config::{RunConfig, ABLATION_FLAGS};
use crate::data::Dataset;
use crate::error::Result;
use crate::eval::{evaluate, mean_row};
use crate::train::{train_stage, Trained};

pub const ABLATION_HEADER: [&str; 6] = ["variant", "cd_e3", "fscore", "baseline_cd_e3", "uni_loss", "cross_loss"];

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    pub cd_e3: f64,
    pub fscore: f64,
    pub baseline_cd_e3: f64,
    /// Final-epoch training totals of each stage.
    pub uni_loss: f64,
    pub cross_loss: f64,
}

/// Both stages on `data.train`, scored on `data.test`.
pub fn train_and_score(cfg: &RunConfig, variant: &str, data: &Dataset) -> Result<AblationRow> {
    let mut t = Trained::init(cfg)?;
    let uni = train_stage(&mut t, Stage::Uni, data)?;
    let cross = train_stage(&mut t, Stage::Cross, data)?;
    let rows = evaluate(&t, &data.test)?;
    let m = mean_row(&rows);
    let last = |l: &[crate::train::EpochLog]| l.last().map_or(f64::NAN, |e| e.report.total);
    Ok(AblationRow {
        variant: variant.to_string(),
        cd_e3: m.cd_e3,
        fscore: m.fscore,
        baseline_cd_e3: m.baseline_cd_e3,
        uni_loss: last(&uni),
        cross_loss: last(&cross),
    })
}

/// `baseline` first, then one row per flag in [`ABLATION_FLAGS`] order.
pub fn run_ablation_suite(base: &RunConfig, data: &Dataset) -> Result<Vec<AblationRow>> {
    let mut variants = vec![("baseline".to_string(), base.clone())];
    for flag in ABLATION_FLAGS {
        variants.push((flag.to_string(), base.with_flag(flag)?));
    }
    variants
        .par_iter()
        .map(|(name, cfg)| train_and_score(cfg, name, data))
        .collect()
}

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(ABLATION_HEADER)?;
    for r in rows {
        w.write_record([
            r.variant.clone(),
            format!("{:?}", r.cd_e3),
            format!("{:?}", r.fscore),
            format!("{:?}", r.baseline_cd_e3),
            format!("{:?}", r.uni_loss),
            format!("{:?}", r.cross_loss),
        ])?;
    }
    w.flush()?;
    Ok(())
}
