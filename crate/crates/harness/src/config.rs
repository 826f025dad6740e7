//! Run configuration: every hyperparameter plus the ablation flags, stored
//! as flat `key = value` text with `#` comments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use mambatron::model::ModelConfig;
use mambatron::objective::LossWeights;

use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub c: usize,
    pub n_state: usize,
    pub depth: usize,
    pub depth_cross: usize,
    pub w_blk: usize,
    pub heads: usize,
    pub n_p: usize,
    pub k: usize,
    pub out_k: usize,
    pub g: usize,
    pub patch: usize,
    pub sigma: f64,
    pub grid: usize,
    pub lr: f64,
    pub momentum: f64,
    pub clip: f64,
    pub batch: usize,
    pub epochs: usize,
    pub epochs_cross: usize,
    pub mask_ratio: f64,
    pub affine_steps: usize,
    pub affine_candidates: usize,
    pub fscore_d: f64,
    pub w_cd: f64,
    pub w_2d: f64,
    pub w_proj: f64,
    pub w_style: f64,
    /// Train samples per class used by the trainer; 0 means all.
    pub train_per_class: usize,
    pub seed: u64,
    pub no_blocktr: bool,
    pub separate_intra: bool,
    pub no_crossmodal: bool,
    pub no_style_proj: bool,
    pub no_apr: bool,
    pub no_affine: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            c: 64,
            n_state: 16,
            depth: 2,
            depth_cross: 2,
            w_blk: 4,
            heads: 4,
            n_p: 32,
            k: 16,
            out_k: 16,
            g: mambatron::geometry::DEFAULT_BINS,
            patch: 8,
            sigma: mambatron::objective::DEFAULT_SIGMA,
            grid: mambatron::objective::DEFAULT_GRID,
            lr: 1e-2,
            momentum: 0.9,
            clip: 10.0,
            batch: 8,
            epochs: 200,
            epochs_cross: 200,
            mask_ratio: 0.3,
            affine_steps: 4,
            affine_candidates: 4,
            fscore_d: 1e-3,
            w_cd: 1.0,
            w_2d: 1.0,
            w_proj: 1.0,
            w_style: 1.0,
            train_per_class: 0,
            seed: 42,
            no_blocktr: false,
            separate_intra: false,
            no_crossmodal: false,
            no_style_proj: false,
            no_apr: false,
            no_affine: false,
        }
    }
}

/// Names of the single-flag ablations, in report order.
pub const ABLATION_FLAGS: [&str; 6] = [
    "no_blocktr",
    "no_crossmodal",
    "no_style_proj",
    "separate_intra",
    "no_apr",
    "no_affine",
];

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| HarnessError::Data(format!("config key `{key}`: cannot parse `{v}`")))
}

macro_rules! config_fields {
    ($($name:ident),* $(,)?) => {
        impl RunConfig {
            /// All keys with their values; floats use shortest round-trip
            /// formatting so `parse(to_text())` is exact.
            pub fn to_map(&self) -> BTreeMap<String, String> {
                let mut m = BTreeMap::new();
                $( m.insert(stringify!($name).to_string(), Fmt(&self.$name).to_string()); )*
                m
            }

            fn set(&mut self, key: &str, v: &str) -> Result<()> {
                match key {
                    $( stringify!($name) => self.$name = parse(key, v)?, )*
                    _ => return Err(HarnessError::Data(format!("unknown config key `{key}`"))),
                }
                Ok(())
            }
        }
    };
}

config_fields!(
    c, n_state, depth, depth_cross, w_blk, heads, n_p, k, out_k, g, patch, sigma, grid, lr, momentum, clip, batch,
    epochs, epochs_cross, mask_ratio, affine_steps, affine_candidates, fscore_d, w_cd, w_2d, w_proj, w_style,
    train_per_class, seed, no_blocktr, separate_intra, no_crossmodal, no_style_proj, no_apr, no_affine,
);

struct Fmt<'a, T>(&'a T);

impl std::fmt::Display for Fmt<'_, f64> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

macro_rules! plain_fmt {
    ($($t:ty),*) => {$(
        impl std::fmt::Display for Fmt<'_, $t> {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    )*};
}
plain_fmt!(usize, u64, bool);

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Data(format!("config line {}: expected `key = value`", ln + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in map {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Data(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.to_map() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        let bad = |m: &str| Err(HarnessError::Data(m.to_string()));
        if self.batch == 0 {
            return bad("batch must be at least 1");
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return bad("mask_ratio must lie in [0, 1)");
        }
        if !(self.sigma > 0.0) || self.grid == 0 {
            return bad("sigma and grid must be positive");
        }
        if self.grid != self.model_config().image_size {
            return bad("grid must equal the image size");
        }
        if !(self.lr >= 0.0) || !(self.clip > 0.0) {
            return bad("lr must be non-negative and clip positive");
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            c: self.c,
            state_dim: self.n_state,
            depth_intra: self.depth,
            depth_cross: self.depth_cross,
            w_blk: self.w_blk,
            heads: self.heads,
            n_p: self.n_p,
            k: self.k,
            out_k: self.out_k,
            bins: self.g,
            patch: self.patch,
            image_size: self.grid,
            zoh_b: false,
            block_tr: !self.no_blocktr,
            cross_modal: !self.no_crossmodal,
            separate_intra: self.separate_intra,
            apr: !self.no_apr,
        }
    }

    pub fn weights(&self) -> LossWeights {
        let aux = if self.no_style_proj { 0.0 } else { 1.0 };
        LossWeights {
            cd: self.w_cd,
            img2d: self.w_2d,
            proj: self.w_proj * aux,
            style: self.w_style * aux,
        }
    }

    /// Whether the APR transform is searched during training.
    pub fn evolves_affine(&self) -> bool {
        !self.no_apr && !self.no_affine && self.affine_steps > 0
    }

    /// Copy with one ablation flag switched on.
    pub fn with_flag(&self, flag: &str) -> Result<Self> {
        let mut c = self.clone();
        c.set(flag, "true")?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_is_lossless() {
        let cfg = RunConfig {
            lr: 0.1 + 0.2,
            sigma: 1.0 / 3.0,
            no_apr: true,
            seed: u64::MAX,
            ..RunConfig::default()
        };
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(RunConfig::from_map(&cfg.to_map()).unwrap(), cfg);
    }

    #[test]
    fn comments_and_errors() {
        let cfg = RunConfig::parse("# desk scale\nc = 32  # width\n\nepochs=3\n").unwrap();
        assert_eq!((cfg.c, cfg.epochs), (32, 3));
        assert!(RunConfig::parse("bogus = 1").is_err());
        assert!(RunConfig::parse("c = many").is_err());
        assert!(RunConfig::parse("c 32").is_err());
        assert!(RunConfig::parse("heads = 5").is_err());
    }

    #[test]
    fn flags_map_to_model_and_weights() {
        let base = RunConfig::default();
        for flag in ABLATION_FLAGS {
            let on = base.with_flag(flag).unwrap();
            assert_ne!(on, base);
            // flags are independent: exactly one differs
            let diff = on.to_map().iter().filter(|(k, v)| base.to_map()[*k] != **v).count();
            assert_eq!(diff, 1);
        }
        assert!(!base.with_flag("no_blocktr").unwrap().model_config().block_tr);
        let w = base.with_flag("no_style_proj").unwrap().weights();
        assert_eq!((w.proj, w.style, w.cd, w.img2d), (0.0, 0.0, 1.0, 1.0));
        assert!(!base.with_flag("no_affine").unwrap().evolves_affine());
        assert!(base.with_flag("no_affine").unwrap().model_config().apr);
    }
}
