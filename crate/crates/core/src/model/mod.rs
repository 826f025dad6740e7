//! End-to-end network: tokenizers, intra- and cross-modal encoders, decoders.

mod checkpoint;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blockattn::BlockConfig;
use crate::cell::{CellConfig, CellStack};
use crate::error::{Error, Result};
use crate::geometry::{apr, fps, knn_group, AffineParams, GroupedCloud, Point, PointCloud};
use crate::numerics::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::objective::Image;

/// Intra-modal (`f_i`, `f_p`) and cross-modal (`f_i_x`, `f_p_x`) features.
#[derive(Clone, Debug)]
pub struct FeatureSet {
    pub f_i: Tensor,
    pub f_p: Tensor,
    pub f_i_x: Tensor,
    pub f_p_x: Tensor,
}

/// [`FeatureSet`] as graph variables.
#[derive(Clone, Copy, Debug)]
pub struct FeatureVars {
    pub f_i: Var,
    pub f_p: Var,
    pub f_i_x: Var,
    pub f_p_x: Var,
}

impl FeatureVars {
    pub fn values(&self, g: &Graph) -> FeatureSet {
        FeatureSet {
            f_i: g.value(self.f_i).clone(),
            f_p: g.value(self.f_p).clone(),
            f_i_x: g.value(self.f_i_x).clone(),
            f_p_x: g.value(self.f_p_x).clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modality {
    Image,
    Point,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Special {
    Image,
    Point,
    Stop,
}

/// Positions of the special tokens and of each modality's body in a wrapped
/// sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SequenceLayout {
    pub len: usize,
    pub specials: Vec<(Special, usize)>,
    pub image: Option<(usize, usize)>,
    pub point: Option<(usize, usize)>,
}

impl SequenceLayout {
    /// `[<I>|<P>, body, <STOP>]`.
    pub fn intra(n: usize, modality: Modality) -> Self {
        let (lead, image, point) = match modality {
            Modality::Image => (Special::Image, Some((1, n)), None),
            Modality::Point => (Special::Point, None, Some((1, n))),
        };
        Self {
            len: n + 2,
            specials: vec![(lead, 0), (Special::Stop, n + 1)],
            image,
            point,
        }
    }

    /// `[<I>, image, <P>, points, <STOP>]`.
    pub fn cross(n_i: usize, n_p: usize) -> Self {
        Self {
            len: n_i + n_p + 3,
            specials: vec![(Special::Image, 0), (Special::Point, n_i + 1), (Special::Stop, n_i + n_p + 2)],
            image: Some((1, n_i)),
            point: Some((n_i + 2, n_p)),
        }
    }
}

/// Embedded tokens of one modality before wrapping; `gcp` is the embedded
/// keypoint position for point tokens.
#[derive(Clone, Copy, Debug)]
pub struct TokenSequence {
    pub emb: Var,
    pub gcp: Option<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub c: usize,
    pub state_dim: usize,
    pub depth_intra: usize,
    pub depth_cross: usize,
    pub w_blk: usize,
    pub heads: usize,
    pub n_p: usize,
    pub k: usize,
    pub out_k: usize,
    pub bins: usize,
    pub patch: usize,
    pub image_size: usize,
    pub zoh_b: bool,
    pub block_tr: bool,
    pub cross_modal: bool,
    pub separate_intra: bool,
    pub apr: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            c: 64,
            state_dim: 16,
            depth_intra: 2,
            depth_cross: 2,
            w_blk: 4,
            heads: 4,
            n_p: 32,
            k: 16,
            out_k: 16,
            bins: crate::geometry::DEFAULT_BINS,
            patch: 8,
            image_size: 32,
            zoh_b: false,
            block_tr: true,
            cross_modal: true,
            separate_intra: false,
            apr: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.block_config().validate()?;
        let bad = |m: String| Err(Error::Argument(m));
        if self.n_p == 0 || self.k == 0 || self.out_k == 0 || self.state_dim == 0 {
            return bad("n_p, k, out_k and state_dim must be positive".into());
        }
        if self.patch == 0 || self.image_size % self.patch != 0 {
            return bad(format!("image size {} not divisible by patch {}", self.image_size, self.patch));
        }
        Ok(())
    }

    pub fn n_i(&self) -> usize {
        (self.image_size / self.patch).pow(2)
    }

    pub fn block_config(&self) -> BlockConfig {
        BlockConfig {
            w_blk: self.w_blk,
            heads: self.heads,
            c: self.c,
        }
    }

    pub fn cell_config(&self) -> CellConfig {
        CellConfig {
            block: self.block_config(),
            state_dim: self.state_dim,
            max_len: self.n_i() + self.n_p + 3,
            zoh_b: self.zoh_b,
        }
    }

    pub fn output_points(&self) -> usize {
        self.n_p * self.out_k
    }
}

#[derive(Clone, Debug)]
struct Mlp {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl Mlp {
    fn init<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, dims: [usize; 3], rng: &mut R) -> Self {
        Self {
            w1: store.add(format!("{prefix}.w1"), Tensor::fan_in_uniform(&[dims[0], dims[1]], rng)),
            b1: store.add(format!("{prefix}.b1"), Tensor::zeros(&[dims[1]])),
            w2: store.add(format!("{prefix}.w2"), Tensor::fan_in_uniform(&[dims[1], dims[2]], rng)),
            b2: store.add(format!("{prefix}.b2"), Tensor::zeros(&[dims[2]])),
        }
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let (w1, b1, w2, b2) = (
            g.param(store, self.w1),
            g.param(store, self.b1),
            g.param(store, self.w2),
            g.param(store, self.b2),
        );
        let h = g.linear(x, w1, b1)?;
        let h = g.silu(h);
        g.linear(h, w2, b2)
    }
}

/// Shared per-point MLP with group max-pooling, twice: the second stage sees
/// each point's feature next to its group's pooled feature.
#[derive(Clone, Debug)]
struct PointTokenizer {
    first: Mlp,
    w_local: ParamId,
    w_global: ParamId,
    b_mix: ParamId,
    w_out: ParamId,
    b_out: ParamId,
}

impl PointTokenizer {
    fn init<R: Rng + ?Sized>(store: &mut ParamStore, c: usize, rng: &mut R) -> Self {
        let h = c;
        let first = Mlp::init(store, "tok.p.first", [3, h, h], rng);
        // halves of one 2h→c projection over [point ‖ pooled]
        let bound = 1.0 / ((2 * h) as f64).sqrt();
        Self {
            first,
            w_local: store.add("tok.p.w_local", Tensor::uniform(&[h, c], bound, rng)),
            w_global: store.add("tok.p.w_global", Tensor::uniform(&[h, c], bound, rng)),
            b_mix: store.add("tok.p.b_mix", Tensor::zeros(&[c])),
            w_out: store.add("tok.p.w_out", Tensor::fan_in_uniform(&[c, c], rng)),
            b_out: store.add("tok.p.b_out", Tensor::zeros(&[c])),
        }
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, groups: &[Vec<Point>]) -> Result<Var> {
        let k = groups.first().map_or(0, Vec::len);
        if k == 0 || groups.iter().any(|gr| gr.len() != k) {
            return Err(Error::Argument("groups must be non-empty and equally sized".into()));
        }
        let data: Vec<f64> = groups.iter().flatten().flatten().copied().collect();
        let pts = g.constant(Tensor::new(vec![groups.len() * k, 3], data)?);
        let h1 = self.first.forward(g, store, pts)?;
        let pooled = g.group_max(h1, k)?;
        let wl = g.param(store, self.w_local);
        let wg = g.param(store, self.w_global);
        let bm = g.param(store, self.b_mix);
        let local = g.linear(h1, wl, bm)?;
        let global = g.matmul(pooled, wg)?;
        let owner: Vec<usize> = (0..groups.len()).flat_map(|gi| std::iter::repeat(gi).take(k)).collect();
        let global = g.gather_rows(global, owner)?;
        let mixed = g.add(local, global)?;
        let mixed = g.silu(mixed);
        let wo = g.param(store, self.w_out);
        let bo = g.param(store, self.b_out);
        let out = g.linear(mixed, wo, bo)?;
        g.group_max(out, k)
    }
}

/// Output of [`MambaTron::tokenize_points`].
#[derive(Clone, Debug)]
pub struct PointTokens {
    pub grouped: GroupedCloud,
    pub pos_emb: Var,
    pub group_emb: Var,
}

/// Output of [`MambaTron::forward`].
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `(n_p·out_k)×3` completed cloud.
    pub points: Var,
    /// `H×W` image in `[0, 1]`.
    pub image: Var,
    pub features: FeatureVars,
    pub grouped: GroupedCloud,
}

/// Which encoders run: the unimodal stage decodes straight from the
/// intra-modal features.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pass {
    Uni,
    Cross,
}

#[derive(Clone, Debug)]
pub struct MambaTron {
    pub cfg: ModelConfig,
    point_tok: PointTokenizer,
    gcp_w: ParamId,
    gcp_b: ParamId,
    patch_w: ParamId,
    patch_b: ParamId,
    patch_pos: ParamId,
    specials: [ParamId; 3],
    intra: CellStack,
    intra_image: Option<CellStack>,
    cross: CellStack,
    point_dec: Mlp,
    image_dec: Mlp,
}

fn special_index(s: Special) -> usize {
    match s {
        Special::Image => 0,
        Special::Point => 1,
        Special::Stop => 2,
    }
}

impl MambaTron {
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<(Self, ParamStore)> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = cfg.c;
        let cell_cfg = cfg.cell_config();
        let point_tok = PointTokenizer::init(&mut store, c, &mut rng);
        let gcp_w = store.add("tok.gcp.w", Tensor::fan_in_uniform(&[3, c], &mut rng));
        let gcp_b = store.add("tok.gcp.b", Tensor::zeros(&[c]));
        let pp = cfg.patch * cfg.patch;
        let patch_w = store.add("tok.img.w", Tensor::fan_in_uniform(&[pp, c], &mut rng));
        let patch_b = store.add("tok.img.b", Tensor::zeros(&[c]));
        let patch_pos = store.add("tok.img.pos", Tensor::uniform(&[cfg.n_i(), c], 0.02, &mut rng));
        let specials = ["img", "pt", "stop"].map(|n| store.add(format!("special.{n}"), Tensor::uniform(&[1, c], 1.0, &mut rng)));
        let intra = CellStack::init(&mut store, "intra", cfg.depth_intra, &cell_cfg, &mut rng);
        let intra_image = cfg
            .separate_intra
            .then(|| CellStack::init(&mut store, "intra_img", cfg.depth_intra, &cell_cfg, &mut rng));
        let cross = CellStack::init(&mut store, "cross", cfg.depth_cross, &cell_cfg, &mut rng);
        let point_dec = Mlp::init(&mut store, "dec.p", [c, 2 * c, 3 * cfg.out_k], &mut rng);
        let image_dec = Mlp::init(&mut store, "dec.img", [c, 2 * c, pp], &mut rng);
        let model = Self {
            cfg,
            point_tok,
            gcp_w,
            gcp_b,
            patch_w,
            patch_b,
            patch_pos,
            specials,
            intra,
            intra_image,
            cross,
            point_dec,
            image_dec,
        };
        Ok((model, store))
    }

    /// FPS keypoints and KNN groups, serialized by APR under `affine` (or
    /// left in FPS order when APR is off).
    pub fn group_points(&self, cloud: &PointCloud, affine: &AffineParams) -> Result<GroupedCloud> {
        let idx = fps(cloud, self.cfg.n_p, 0)?;
        let grouped = knn_group(cloud, &idx, self.cfg.k)?;
        if !self.cfg.apr {
            return Ok(grouped);
        }
        let order = apr(&grouped.keypoints, affine, self.cfg.bins)?;
        Ok(grouped.reordered(&order))
    }

    /// Group and position embeddings for already grouped points.
    pub fn tokenize_groups(&self, g: &mut Graph, store: &ParamStore, grouped: &GroupedCloud) -> Result<(Var, Var)> {
        let group_emb = self.point_tok.forward(g, store, &grouped.groups)?;
        let kp: Vec<f64> = grouped.keypoints.iter().flatten().copied().collect();
        let kp = g.constant(Tensor::new(vec![grouped.n_groups(), 3], kp)?);
        let (w, b) = (g.param(store, self.gcp_w), g.param(store, self.gcp_b));
        let pos_emb = g.linear(kp, w, b)?;
        Ok((pos_emb, group_emb))
    }

    pub fn tokenize_points(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        cloud: &PointCloud,
        affine: &AffineParams,
    ) -> Result<PointTokens> {
        if cloud.len() < self.cfg.n_p.max(self.cfg.k) {
            return Err(Error::Argument(format!(
                "cloud of {} points is smaller than n_p={} / k={}",
                cloud.len(),
                self.cfg.n_p,
                self.cfg.k
            )));
        }
        let grouped = self.group_points(cloud, affine)?;
        let (pos_emb, group_emb) = self.tokenize_groups(g, store, &grouped)?;
        Ok(PointTokens {
            grouped,
            pos_emb,
            group_emb,
        })
    }

    /// Flattened non-overlapping patches, `n_i × patch²`, row-major over the
    /// patch grid.
    pub fn patches(img: &Image, patch: usize) -> Result<Tensor> {
        let (h, w) = (img.height(), img.width());
        if patch == 0 || h % patch != 0 || w % patch != 0 {
            return Err(Error::Argument(format!("{h}×{w} image not divisible into {patch}-pixel patches")));
        }
        let (ph, pw) = (h / patch, w / patch);
        let mut data = Vec::with_capacity(h * w);
        for pr in 0..ph {
            for pc in 0..pw {
                for r in 0..patch {
                    for c in 0..patch {
                        data.push(img.at(pr * patch + r, pc * patch + c));
                    }
                }
            }
        }
        Tensor::new(vec![ph * pw, patch * patch], data)
    }

    /// Patch embeddings without the position table.
    pub fn embed_patches(&self, g: &mut Graph, store: &ParamStore, img: &Image) -> Result<Var> {
        let p = g.constant(Self::patches(img, self.cfg.patch)?);
        let (w, b) = (g.param(store, self.patch_w), g.param(store, self.patch_b));
        g.linear(p, w, b)
    }

    pub fn tokenize_image(&self, g: &mut Graph, store: &ParamStore, img: &Image) -> Result<Var> {
        if img.height() != self.cfg.image_size || img.width() != self.cfg.image_size {
            return Err(Error::Argument(format!(
                "expected a {0}×{0} image, got {1}×{2}",
                self.cfg.image_size,
                img.height(),
                img.width()
            )));
        }
        let e = self.embed_patches(g, store, img)?;
        let pos = g.param(store, self.patch_pos);
        g.add(e, pos)
    }

    fn special(&self, g: &mut Graph, store: &ParamStore, s: Special) -> Var {
        g.param(store, self.specials[special_index(s)])
    }

    /// Builds the wrapped sequence for `layout` from the bodies (keyed by
    /// start row) and the learned special tokens.
    fn assemble(&self, g: &mut Graph, store: &ParamStore, layout: &SequenceLayout, bodies: &[(usize, Var)]) -> Result<Var> {
        let mut pieces: Vec<(usize, Var)> = layout
            .specials
            .iter()
            .map(|&(s, pos)| (pos, self.special(g, store, s)))
            .collect();
        pieces.extend_from_slice(bodies);
        pieces.sort_by_key(|p| p.0);
        let vars: Vec<Var> = pieces.into_iter().map(|p| p.1).collect();
        g.concat_rows(&vars)
    }

    /// GCP rows for `layout`: embedded positions on the point body, zero
    /// elsewhere.
    fn layout_gcp(&self, g: &mut Graph, layout: &SequenceLayout, gcp: Var) -> Result<Var> {
        let (start, n) = layout.point.ok_or_else(|| Error::Contract("layout has no point body".into()))?;
        let c = self.cfg.c;
        let mut parts = Vec::new();
        if start > 0 {
            parts.push(g.constant(Tensor::zeros(&[start, c])));
        }
        parts.push(gcp);
        let tail = layout.len - start - n;
        if tail > 0 {
            parts.push(g.constant(Tensor::zeros(&[tail, c])));
        }
        g.concat_rows(&parts)
    }

    fn intra_stack(&self, modality: Modality) -> &CellStack {
        match (modality, &self.intra_image) {
            (Modality::Image, Some(s)) => s,
            _ => &self.intra,
        }
    }

    /// Whether the image path owns a separate encoder.
    pub fn has_separate_intra(&self) -> bool {
        self.intra_image.is_some()
    }

    /// Wraps with the modality token and `<STOP>`, runs the intra-modal
    /// stack, strips the specials.
    pub fn intra_encode(&self, g: &mut Graph, store: &ParamStore, tokens: TokenSequence, modality: Modality) -> Result<Var> {
        let n = g.shape(tokens.emb)[0];
        let layout = SequenceLayout::intra(n, modality);
        let seq = self.assemble(g, store, &layout, &[(1, tokens.emb)])?;
        let gcp = match (modality, tokens.gcp) {
            (Modality::Point, Some(p)) => Some(self.layout_gcp(g, &layout, p)?),
            _ => None,
        };
        let cell_cfg = self.cfg.cell_config();
        let out = self.intra_stack(modality).forward(g, store, seq, gcp, &cell_cfg, self.cfg.block_tr)?;
        g.slice_rows(out, 1, n)
    }

    /// `[<I>, f_i, <P>, f_p, <STOP>]` through the cross-modal stack; returns
    /// `(f_i_x, f_p_x)`.
    pub fn cross_encode(&self, g: &mut Graph, store: &ParamStore, f_i: Var, f_p: Var, gcp: Var) -> Result<(Var, Var)> {
        let (n_i, n_p) = (g.shape(f_i)[0], g.shape(f_p)[0]);
        let layout = SequenceLayout::cross(n_i, n_p);
        let seq = self.assemble(g, store, &layout, &[(1, f_i), (n_i + 2, f_p)])?;
        let gcp = self.layout_gcp(g, &layout, gcp)?;
        let cell_cfg = self.cfg.cell_config();
        let out = self.cross.forward(g, store, seq, Some(gcp), &cell_cfg, self.cfg.block_tr)?;
        let fi = g.slice_rows(out, 1, n_i)?;
        let fp = g.slice_rows(out, n_i + 2, n_p)?;
        Ok((fi, fp))
    }

    /// Each feature row becomes `out_k` offsets around its keypoint.
    pub fn decode_points(&self, g: &mut Graph, store: &ParamStore, f_p: Var, keypoints: &[Point]) -> Result<Var> {
        let n_p = g.shape(f_p)[0];
        if n_p != keypoints.len() {
            return Err(Error::Argument(format!("{n_p} features for {} keypoints", keypoints.len())));
        }
        let k = self.cfg.out_k;
        let off = self.point_dec.forward(g, store, f_p)?;
        let off = g.reshape(off, &[n_p * k, 3])?;
        let base: Vec<f64> = keypoints.iter().flat_map(|p| std::iter::repeat(p).take(k)).flatten().copied().collect();
        let base = g.constant(Tensor::new(vec![n_p * k, 3], base)?);
        g.add(off, base)
    }

    /// Per-patch MLP, sigmoid, patches reassembled into an `H×W` image.
    pub fn decode_image(&self, g: &mut Graph, store: &ParamStore, f_i: Var) -> Result<Var> {
        let (p, side) = (self.cfg.patch, self.cfg.image_size);
        let n_i = g.shape(f_i)[0];
        if n_i != self.cfg.n_i() {
            return Err(Error::Argument(format!("{n_i} image features for {} patches", self.cfg.n_i())));
        }
        let logits = self.image_dec.forward(g, store, f_i)?;
        let pix = g.sigmoid(logits);
        // rows of p pixels: patch-major → image-row-major
        let rows = g.reshape(pix, &[n_i * p, p])?;
        let per_row = side / p;
        let idx: Vec<usize> = (0..side)
            .flat_map(|r| (0..per_row).map(move |pc| ((r / p) * per_row + pc) * p + r % p))
            .collect();
        let img = g.gather_rows(rows, idx)?;
        g.reshape(img, &[side, side])
    }

    /// Full pass. `Pass::Uni` decodes from masked intra-modal features;
    /// `Pass::Cross` adds the cross-modal stack (unless ablated, in which case
    /// the intra features stand in for the cross ones).
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        grouped: &GroupedCloud,
        view: &Image,
        pass: Pass,
        mask: Option<(f64, u64)>,
    ) -> Result<ForwardOutput> {
        let (gcp, group_emb) = self.tokenize_groups(g, store, grouped)?;
        let img_tok = self.tokenize_image(g, store, view)?;
        // point tokens carry their position like image tokens do; the GCP
        // also reaches every cell through the context rows
        let point_tok = g.add(group_emb, gcp)?;
        let f_p = self.intra_encode(g, store, TokenSequence { emb: point_tok, gcp: Some(gcp) }, Modality::Point)?;
        let f_i = self.intra_encode(g, store, TokenSequence { emb: img_tok, gcp: None }, Modality::Image)?;
        let (f_i_x, f_p_x) = if pass == Pass::Cross && self.cfg.cross_modal {
            self.cross_encode(g, store, f_i, f_p, gcp)?
        } else {
            (f_i, f_p)
        };
        let (mut dec_i, mut dec_p) = match pass {
            Pass::Uni => (f_i, f_p),
            Pass::Cross => (f_i_x, f_p_x),
        };
        if let Some((ratio, seed)) = mask {
            dec_i = mask_features_op(g, dec_i, ratio, seed)?;
            dec_p = mask_features_op(g, dec_p, ratio, seed.wrapping_add(1))?;
        }
        let points = self.decode_points(g, store, dec_p, &grouped.keypoints)?;
        let image = self.decode_image(g, store, dec_i)?;
        Ok(ForwardOutput {
            points,
            image,
            features: FeatureVars { f_i, f_p, f_i_x, f_p_x },
            grouped: grouped.clone(),
        })
    }
}

/// Indices of the `⌊ratio·n⌋` rows to zero.
pub fn mask_rows(n: usize, ratio: f64, seed: u64) -> Result<Vec<usize>> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::Argument(format!("mask ratio {ratio} outside [0, 1)")));
    }
    let m = (ratio * n as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, n, m).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

fn mask_factors(n: usize, ratio: f64, seed: u64) -> Result<Vec<f64>> {
    let mut f = vec![1.0; n];
    for i in mask_rows(n, ratio, seed)? {
        f[i] = 0.0;
    }
    Ok(f)
}

pub fn mask_features(f: &Tensor, ratio: f64, seed: u64) -> Result<Tensor> {
    let factors = mask_factors(f.rows(), ratio, seed)?;
    let mut out = f.clone();
    for (i, s) in factors.iter().enumerate() {
        out.row_mut(i).iter_mut().for_each(|v| *v *= s);
    }
    Ok(out)
}

pub fn mask_features_op(g: &mut Graph, f: Var, ratio: f64, seed: u64) -> Result<Var> {
    let factors = mask_factors(g.shape(f)[0], ratio, seed)?;
    g.row_scale(f, factors)
}
