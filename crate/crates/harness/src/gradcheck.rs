//! Central-difference gradient checks for every differentiable op, grouped
//! by module, plus the tiny end-to-end model.

use mambatron::blockattn::{blocked_attention_op, BlockAttnLayer, BlockAttnParams, BlockConfig};
use mambatron::cell::{CellConfig, CellStack};
use mambatron::geometry::{AffineParams, PointCloud};
use mambatron::model::{mask_features_op, MambaTron, ModelConfig, Pass};
use mambatron::numerics::{check_graph_fn, finite_diff_check, Graph, ParamStore, Tensor, Var, DEFAULT_FD_EPS};
use mambatron::objective::{chamfer_op, gram_op, project, project_op, style_loss_op};
use mambatron::ssm::{scan_op, BidirectionalMamba, Direction};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{HarnessError, Result};

pub const MODULES: [&str; 6] = ["numerics", "ssm", "blockattn", "cell", "objective", "model"];
pub const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub module: &'static str,
    pub name: &'static str,
    pub max_rel_err: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= GRAD_TOLERANCE
    }
}

fn rand_t(shape: &[usize], bound: f64, seed: u64) -> Tensor {
    Tensor::uniform(shape, bound, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// `Σ y ⊙ R` for a fixed random `R`, so every output entry matters.
fn weighted_sum(g: &mut Graph, y: Var, seed: u64) -> Result<Var, mambatron::Error> {
    let r = g.constant(rand_t(&g.shape(y).to_vec(), 1.0, seed));
    let m = g.mul(y, r)?;
    Ok(g.sum(m))
}

/// Checks the gradient of `loss(g, store)` with respect to every parameter.
fn check_params<F>(store: &ParamStore, loss: F) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var, mambatron::Error>,
{
    let mut g = Graph::new();
    let l = loss(&mut g, store)?;
    let analytic = g.backward(l)?.flatten_params(store);
    let err = finite_diff_check(
        |x| {
            let mut s = store.clone();
            s.unflatten(x);
            let mut g = Graph::inference();
            loss(&mut g, &s).map_or(f64::NAN, |l| g.value(l).item())
        },
        &store.flatten(),
        &analytic,
        DEFAULT_FD_EPS,
        None,
    )?;
    Ok(err)
}

type Check = (&'static str, Box<dyn Fn() -> Result<f64>>);

fn numerics_checks() -> Vec<Check> {
    let e = DEFAULT_FD_EPS;
    vec![
        (
            "linear",
            Box::new(move || {
                let ins = [rand_t(&[3, 4], 1.0, 1), rand_t(&[4, 2], 1.0, 2), rand_t(&[2], 1.0, 3)];
                Ok(check_graph_fn(&ins, |g, v| {
                    let y = g.linear(v[0], v[1], v[2])?;
                    weighted_sum(g, y, 4)
                }, e)?)
            }),
        ),
        (
            "softmax_rows",
            Box::new(move || {
                Ok(check_graph_fn(&[rand_t(&[3, 5], 2.0, 5)], |g, v| {
                    let y = g.softmax_rows(v[0])?;
                    weighted_sum(g, y, 6)
                }, e)?)
            }),
        ),
        (
            "layer_norm",
            Box::new(move || {
                let ins = [rand_t(&[3, 6], 2.0, 7), rand_t(&[6], 1.0, 8), rand_t(&[6], 1.0, 9)];
                Ok(check_graph_fn(&ins, |g, v| {
                    let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
                    weighted_sum(g, y, 10)
                }, e)?)
            }),
        ),
        (
            "elementwise",
            Box::new(move || {
                let ins = [rand_t(&[4, 3], 2.0, 11), rand_t(&[4, 3], 2.0, 12)];
                Ok(check_graph_fn(&ins, |g, v| {
                    let a = g.silu(v[0]);
                    let b = g.sigmoid(v[1]);
                    let c = g.softplus(v[0]);
                    let d = g.square(v[1]);
                    let ab = g.mul(a, b)?;
                    let cd = g.sub(c, d)?;
                    let s = g.scale(cd, 0.7);
                    let y = g.add(ab, s)?;
                    let y = g.clamp(y, -1.5, 1.5);
                    weighted_sum(g, y, 13)
                }, e)?)
            }),
        ),
        (
            "structural",
            Box::new(move || {
                let ins = [rand_t(&[6, 2], 1.0, 14), rand_t(&[2, 3], 1.0, 15), rand_t(&[2, 3], 1.0, 16)];
                Ok(check_graph_fn(&ins, |g, v| {
                    let m = g.matmul(v[0], v[1])?;
                    let t = g.transpose(v[2]);
                    let t = g.reshape(t, &[2, 3])?;
                    let c = g.concat_rows(&[m, t])?;
                    let s = g.slice_rows(c, 1, 6)?;
                    let gth = g.gather_rows(s, vec![5, 0, 0, 3, 2, 4])?;
                    let rs = g.row_scale(gth, vec![1.0, 0.0, 2.0, -1.0, 0.5, 1.0])?;
                    let gm = g.group_max(rs, 2)?;
                    let b = g.constant(Tensor::full(&[3], 0.25));
                    let y = g.add_bias(gm, b)?;
                    weighted_sum(g, y, 17)
                }, e)?)
            }),
        ),
        (
            "mse_mean",
            Box::new(move || {
                let ins = [rand_t(&[3, 3], 1.0, 18), rand_t(&[3, 3], 1.0, 19)];
                Ok(check_graph_fn(&ins, |g, v| {
                    let a = g.mse(v[0], v[1])?;
                    let b = g.mean(v[0]);
                    g.add(a, b)
                }, e)?)
            }),
        ),
    ]
}

fn scan_check(dir: Direction, zoh: bool, seed: u64) -> Result<f64> {
    let (l, c, n) = (7, 3, 2);
    let ins = [
        rand_t(&[l, c], 1.0, seed),
        rand_t(&[l, c], 1.0, seed + 1),
        rand_t(&[l, n], 1.0, seed + 2),
        rand_t(&[l, n], 1.0, seed + 3),
        rand_t(&[c, n], 1.0, seed + 4),
        rand_t(&[c], 1.0, seed + 5),
    ];
    Ok(check_graph_fn(&ins, |g, v| {
        // softplus keeps the step sizes positive
        let delta = g.softplus(v[1]);
        let y = scan_op(g, v[0], delta, v[2], v[3], v[4], v[5], dir, zoh)?;
        weighted_sum(g, y, seed + 6)
    }, DEFAULT_FD_EPS)?)
}

fn ssm_checks() -> Vec<Check> {
    vec![
        ("scan_forward", Box::new(|| scan_check(Direction::Forward, false, 20))),
        ("scan_backward", Box::new(|| scan_check(Direction::Backward, false, 30))),
        ("scan_zoh", Box::new(|| scan_check(Direction::Forward, true, 40))),
        (
            "bidirectional_params",
            Box::new(|| {
                let mut rng = ChaCha8Rng::seed_from_u64(50);
                let mut store = ParamStore::new();
                let m = BidirectionalMamba::init(&mut store, "m", 4, 3, false, &mut rng);
                let x = rand_t(&[6, 4], 1.0, 51);
                check_params(&store, |g, s| {
                    let xv = g.constant(x.clone());
                    let y = m.forward(g, s, xv)?;
                    weighted_sum(g, y, 52)
                })
            }),
        ),
    ]
}

fn blockattn_checks() -> Vec<Check> {
    vec![
        (
            "blocked_attention",
            Box::new(|| {
                let ins: Vec<Tensor> = (0..5).map(|i| rand_t(&[10, 8], 1.0, 60 + i)).collect();
                Ok(check_graph_fn(&ins, |g, v| {
                    let y = blocked_attention_op(g, v[0], v[1], v[2], v[3], v[4], 4, 2)?;
                    weighted_sum(g, y, 66)
                }, DEFAULT_FD_EPS)?)
            }),
        ),
        (
            "block_layer_params",
            Box::new(|| {
                let mut rng = ChaCha8Rng::seed_from_u64(70);
                let mut store = ParamStore::new();
                let layer = BlockAttnLayer::register(&mut store, "b", BlockAttnParams::init(8, &mut rng));
                let cfg = BlockConfig { w_blk: 4, heads: 2, c: 8 };
                let (x, ctx) = (rand_t(&[9, 8], 1.0, 71), rand_t(&[9, 8], 1.0, 72));
                check_params(&store, |g, s| {
                    let (xv, cv) = (g.constant(x.clone()), g.constant(ctx.clone()));
                    let y = layer.forward(g, s, xv, cv, &cfg)?;
                    weighted_sum(g, y, 73)
                })
            }),
        ),
    ]
}

fn cell_checks() -> Vec<Check> {
    let run = |block_tr: bool, with_gcp: bool, seed: u64| -> Result<f64> {
        let cfg = CellConfig {
            block: BlockConfig { w_blk: 4, heads: 2, c: 8 },
            state_dim: 3,
            max_len: 16,
            zoh_b: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let stack = CellStack::init(&mut store, "s", 1, &cfg, &mut rng);
        let x = rand_t(&[10, 8], 1.0, seed + 1);
        let gcp = rand_t(&[10, 8], 1.0, seed + 2);
        check_params(&store, |g, s| {
            let xv = g.constant(x.clone());
            let gv = with_gcp.then(|| g.constant(gcp.clone()));
            let y = stack.forward(g, s, xv, gv, &cfg, block_tr)?;
            weighted_sum(g, y, seed + 3)
        })
    };
    vec![
        ("cell_with_gcp", Box::new(move || run(true, true, 80))),
        ("cell_position_table", Box::new(move || run(true, false, 90))),
        ("cell_no_blocktr", Box::new(move || run(false, true, 100))),
    ]
}

fn objective_checks() -> Vec<Check> {
    let e = DEFAULT_FD_EPS;
    vec![
        (
            "chamfer",
            Box::new(move || {
                let ins = [rand_t(&[9, 3], 1.0, 110), rand_t(&[7, 3], 1.0, 111)];
                Ok(check_graph_fn(&ins, |g, v| chamfer_op(g, v[0], v[1]), e)?)
            }),
        ),
        (
            "projection",
            Box::new(move || {
                Ok(check_graph_fn(&[rand_t(&[6, 3], 0.8, 120)], |g, v| {
                    let img = project_op(g, v[0], 12, 1.5)?;
                    weighted_sum(g, img, 121)
                }, e)?)
            }),
        ),
        (
            "gram",
            Box::new(move || {
                Ok(check_graph_fn(&[rand_t(&[5, 3], 1.0, 130)], |g, v| {
                    let y = gram_op(g, v[0])?;
                    weighted_sum(g, y, 131)
                }, e)?)
            }),
        ),
        (
            "style",
            Box::new(move || {
                let ins = [
                    rand_t(&[4, 3], 1.0, 140),
                    rand_t(&[5, 3], 1.0, 141),
                    rand_t(&[4, 3], 1.0, 142),
                    rand_t(&[5, 3], 1.0, 143),
                ];
                Ok(check_graph_fn(&ins, |g, v| style_loss_op(g, v[0], v[1], v[2], v[3], 5, 3), e)?)
            }),
        ),
    ]
}

/// The end-to-end configuration: `n_p = 4`, `n_i = 4`, `C = 8`, one cell
/// per encoder.
pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        c: 8,
        state_dim: 2,
        depth_intra: 1,
        depth_cross: 1,
        heads: 2,
        n_p: 4,
        k: 4,
        out_k: 2,
        patch: 4,
        image_size: 8,
        ..ModelConfig::default()
    }
}

fn model_checks() -> Vec<Check> {
    let run = |pass: Pass, seed: u64| -> Result<f64> {
        let cfg = tiny_model_config();
        let (m, store) = MambaTron::init(cfg.clone(), seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let mut cloud = |n: usize| PointCloud::new((0..n).map(|_| [0, 1, 2].map(|_| rng.gen_range(-0.8..0.8))).collect());
        let (partial, gt) = (cloud(16)?, cloud(20)?);
        let view = project(&gt, cfg.image_size, 1.0)?;
        let grouped = m.group_points(&partial, &AffineParams::identity())?;
        check_params(&store, |g, s| {
            let out = m.forward(g, s, &grouped, &view, pass, None)?;
            let gt_v = g.constant(gt.to_tensor());
            let view_v = g.constant(view.to_tensor());
            let cd = chamfer_op(g, out.points, gt_v)?;
            let l2d = g.mse(out.image, view_v)?;
            let proj = project_op(g, out.points, cfg.image_size, 1.0)?;
            let lproj = g.mse(proj, view_v)?;
            let f = out.features;
            let fm = mask_features_op(g, f.f_p, 0.25, seed)?;
            let fp = weighted_sum(g, fm, seed + 2)?;
            let style = style_loss_op(g, f.f_i, f.f_p, f.f_i_x, f.f_p_x, cfg.n_p, cfg.c)?;
            let mut loss = g.add(cd, l2d)?;
            for t in [lproj, style, fp] {
                loss = g.add(loss, t)?;
            }
            Ok(loss)
        })
    };
    vec![
        ("tiny_model_uni", Box::new(move || run(Pass::Uni, 150))),
        ("tiny_model_cross", Box::new(move || run(Pass::Cross, 160))),
    ]
}

fn checks_for(module: &str) -> Option<Vec<Check>> {
    Some(match module {
        "numerics" => numerics_checks(),
        "ssm" => ssm_checks(),
        "blockattn" => blockattn_checks(),
        "cell" => cell_checks(),
        "objective" => objective_checks(),
        "model" => model_checks(),
        _ => return None,
    })
}

/// Runs the checks of one module, or of all modules when `module` is `None`.
pub fn run_grad_checks(module: Option<&str>) -> Result<Vec<GradCheck>> {
    let modules: Vec<&'static str> = match module {
        None => MODULES.to_vec(),
        Some(m) => vec![*MODULES
            .iter()
            .find(|&&x| x == m)
            .ok_or_else(|| HarnessError::Usage(format!("unknown module `{m}`; expected one of {MODULES:?}")))?],
    };
    let mut out = Vec::new();
    for m in modules {
        for (name, f) in checks_for(m).expect("listed module") {
            out.push(GradCheck {
                module: m,
                name,
                max_rel_err: f()?,
            });
        }
    }
    Ok(out)
}
