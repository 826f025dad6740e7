use mambatron::geometry::{Point, PointCloud};
use mambatron::model::FeatureSet;
use mambatron::numerics::{check_graph_fn, Tensor, DEFAULT_FD_EPS};
use mambatron::objective::{
    chamfer, chamfer_metric, chamfer_op, fscore, fscore_with, gram, img2d_loss, loss_cross, loss_uni, proj_loss,
    project, project_op, style_loss, style_loss_op, Image, LossReport, LossWeights, Stage, Threshold,
};
use mambatron::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cloud(n: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PointCloud::new((0..n).map(|_| [0, 1, 2].map(|_| rng.gen_range(-1.0..1.0))).collect()).unwrap()
}

fn pc(pts: &[Point]) -> PointCloud {
    PointCloud::new(pts.to_vec()).unwrap()
}

fn rand_t(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::uniform(shape, 1.0, &mut rng)
}

/// Double loop over all pairs, returning the per-direction sums.
fn brute_force(a: &PointCloud, b: &PointCloud) -> (f64, f64) {
    let dir = |x: &PointCloud, y: &PointCloud| {
        let mut total = 0.0;
        for p in x.points() {
            let mut best = f64::INFINITY;
            for q in y.points() {
                let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                best = best.min(d);
            }
            total += best;
        }
        total
    };
    (dir(a, b), dir(b, a))
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
fn jacobi_eigenvalues(m: &Tensor) -> Vec<f64> {
    let n = m.rows();
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| m.row(i).to_vec()).collect();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j].powi(2)).sum();
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}

#[test]
fn chamfer_examples() {
    let a = pc(&[[0.0, 0.0, 0.0]]);
    let b = pc(&[[1.0, 0.0, 0.0]]);
    assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
    assert_eq!(chamfer(&a, &b).unwrap(), 2.0);
    assert_eq!(chamfer(&pc(&[[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]), &b).unwrap(), 3.0);
    assert_eq!(chamfer_metric(&a, &a).unwrap(), 0.0);
    assert_eq!(chamfer_metric(&a, &b).unwrap(), 2000.0);
}

#[test]
fn chamfer_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for trial in 0..200 {
        let (n, m) = (rng.gen_range(1..=256), rng.gen_range(1..=256));
        let a = cloud(n, 1000 + trial);
        let b = cloud(m, 5000 + trial);
        let (f, r) = brute_force(&a, &b);
        let cd = chamfer(&a, &b).unwrap();
        assert!((cd - (f + r)).abs() <= 1e-12 * (f + r).max(1.0));
        assert_eq!(cd, chamfer(&b, &a).unwrap());
        let metric = chamfer_metric(&a, &b).unwrap();
        let expect = (f / n as f64 + r / m as f64) * 1e3;
        assert!((metric - expect).abs() <= 1e-9 * expect.max(1.0));
    }
}

#[test]
fn chamfer_of_permuted_copy_is_zero() {
    let a = cloud(50, 3);
    let mut pts = a.points().to_vec();
    pts.reverse();
    assert_eq!(chamfer(&a, &pc(&pts)).unwrap(), 0.0);
    let mut moved = pts.clone();
    moved[7][1] += 1e-3;
    assert!(chamfer(&a, &pc(&moved)).unwrap() > 0.0);
}

#[test]
fn chamfer_rejects_empty_tensor() {
    let mut g = mambatron::numerics::Graph::new();
    let a = g.leaf(Tensor::zeros(&[0, 3]));
    let b = g.leaf(Tensor::zeros(&[2, 3]));
    assert!(matches!(chamfer_op(&mut g, a, b), Err(Error::Argument(_))));
}

#[test]
fn chamfer_gradient_matches_finite_differences() {
    for seed in 0..5 {
        let inputs = vec![cloud(17, seed).to_tensor(), cloud(23, seed + 100).to_tensor()];
        let err = check_graph_fn(&inputs, |g, v| chamfer_op(g, v[0], v[1]), DEFAULT_FD_EPS).unwrap();
        assert!(err <= 1e-5, "{err}");
    }
}

#[test]
fn fscore_examples() {
    let a = cloud(30, 4);
    assert_eq!(fscore(&a, &a, 1e-3), 1.0);
    let far = a.translated([10.0, 0.0, 0.0]);
    assert_eq!(fscore(&far, &a, 1e-3), 0.0);
    let gt = pc(&[[0.0, 0.0, 0.0]]);
    let out = pc(&[[0.0, 0.0, 0.0], [5.0, 5.0, 5.0]]);
    assert!((fscore(&out, &gt, 1e-3) - 2.0 / 3.0).abs() < 1e-15);
    // 0.03 apart: inside √0.001 ≈ 0.0316 as a squared threshold, outside as plain
    let near = pc(&[[0.03, 0.0, 0.0]]);
    assert_eq!(fscore(&near, &gt, 1e-3), 1.0);
    assert_eq!(fscore_with(&near, &gt, 1e-3, Threshold::Plain), 0.0);
    assert_eq!(fscore_with(&near, &gt, 0.031, Threshold::Plain), 1.0);
}

#[test]
fn gram_is_symmetric_psd() {
    for seed in 0..20 {
        let f = rand_t(&[7, 5], seed);
        let g = gram(&f);
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(g.at(i, j), g.at(j, i));
            }
        }
        let ev = jacobi_eigenvalues(&g);
        assert!(ev.iter().all(|&e| e >= -1e-10), "{ev:?}");
        // rank ≤ rows: with 3 rows and 5 channels two eigenvalues vanish
        let low = jacobi_eigenvalues(&gram(&rand_t(&[3, 5], seed)));
        assert_eq!(low.iter().filter(|e| e.abs() < 1e-10).count(), 2);
    }
}

fn features(n_i: usize, n_p: usize, c: usize, seed: u64) -> FeatureSet {
    FeatureSet {
        f_i: rand_t(&[n_i, c], seed),
        f_p: rand_t(&[n_p, c], seed + 1),
        f_i_x: rand_t(&[n_i, c], seed + 2),
        f_p_x: rand_t(&[n_p, c], seed + 3),
    }
}

#[test]
fn style_loss_matches_direct_formula() {
    let fs = features(6, 4, 3, 10);
    let diff = |a: &Tensor, b: &Tensor| {
        let (ga, gb) = (gram(a), gram(b));
        ga.data().iter().zip(gb.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>()
    };
    let expect = (diff(&fs.f_i, &fs.f_p_x) + diff(&fs.f_p, &fs.f_i_x)) / 12.0;
    assert!((style_loss(&fs, 4, 3).unwrap() - expect).abs() < 1e-13);
}

#[test]
fn style_loss_zero_on_matched_features() {
    let fs = features(5, 5, 4, 20);
    let matched = FeatureSet {
        f_i: fs.f_p_x.clone(),
        f_p: fs.f_i_x.clone(),
        f_i_x: fs.f_i_x.clone(),
        f_p_x: fs.f_p_x.clone(),
    };
    assert_eq!(style_loss(&matched, 5, 4).unwrap(), 0.0);
    // Gram matrices only see FᵀF, so permuting the rows of F_i keeps the match
    let swapped = FeatureSet {
        f_i: fs.f_p_x.gather_rows(&[4, 3, 2, 1, 0]),
        ..matched.clone()
    };
    assert!(style_loss(&swapped, 5, 4).unwrap() < 1e-24);
}

#[test]
fn style_loss_grows_with_scaled_image_features() {
    for seed in 0..10 {
        let fs = features(6, 4, 3, 30 + seed);
        // from a matched partner, any scaling of F_i away from it raises the loss
        let matched = FeatureSet { f_i: fs.f_p_x.clone(), ..fs.clone() };
        let scaled = FeatureSet { f_i: fs.f_p_x.map(|v| 2.0 * v), ..fs.clone() };
        assert!(style_loss(&scaled, 4, 3).unwrap() > style_loss(&matched, 4, 3).unwrap());
    }
}

#[test]
fn style_loss_channel_mismatch() {
    let mut fs = features(4, 4, 3, 40);
    fs.f_p_x = rand_t(&[4, 5], 1);
    assert!(matches!(style_loss(&fs, 4, 3), Err(Error::Argument(_))));
}

#[test]
fn style_gradient_matches_finite_differences() {
    let fs = features(5, 3, 4, 50);
    let inputs = vec![fs.f_i, fs.f_p, fs.f_i_x, fs.f_p_x];
    let err = check_graph_fn(&inputs, |g, v| style_loss_op(g, v[0], v[1], v[2], v[3], 3, 4), DEFAULT_FD_EPS).unwrap();
    assert!(err <= 1e-6, "{err}");
}

#[test]
fn projection_of_single_point() {
    let img = project(&pc(&[[0.0, 0.0, 0.7]]), 33, 1.5).unwrap();
    let mut best = (0.0, 0, 0);
    for r in 0..33 {
        for c in 0..33 {
            if img.at(r, c) > best.0 {
                best = (img.at(r, c), r, c);
            }
        }
    }
    assert_eq!((best.1, best.2), (16, 16));
    // the far corner is untouched
    assert_eq!(img.at(0, 0), 0.0);
    // symmetric about the center
    assert!((img.at(16, 14) - img.at(16, 18)).abs() < 1e-15);
    assert!((img.at(14, 16) - img.at(18, 16)).abs() < 1e-15);
}

#[test]
fn projection_orientation_and_range() {
    // x to the right, y up
    let img = project(&pc(&[[0.9, 0.9, 0.0]]), 32, 1.0).unwrap();
    assert!(img.at(1, 30) > img.at(30, 1));
    assert!(img.at(1, 30) > img.at(30, 30));
    let dense = project(&cloud(2000, 5), 32, 1.5).unwrap();
    assert!(dense.data().iter().all(|&v| (0.0..1.0).contains(&v)));
    // z is dropped
    let flat = project(&pc(&[[0.1, -0.2, -1.0]]), 32, 1.5).unwrap();
    let high = project(&pc(&[[0.1, -0.2, 1.0]]), 32, 1.5).unwrap();
    assert_eq!(flat, high);
}

#[test]
fn projection_gradient_matches_finite_differences() {
    for seed in 0..4 {
        let pts = cloud(20, 60 + seed).to_tensor().map(|v| 0.8 * v);
        let w = rand_t(&[16, 16], seed);
        let err = check_graph_fn(
            &[pts, w],
            |g, v| {
                let img = project_op(g, v[0], 16, 1.5)?;
                let m = g.mul(img, v[1])?;
                Ok(g.sum(m))
            },
            DEFAULT_FD_EPS,
        )
        .unwrap();
        assert!(err <= 1e-5, "{err}");
    }
}

#[test]
fn tape_projection_equals_direct() {
    let c = cloud(40, 70);
    let mut g = mambatron::numerics::Graph::inference();
    let v = g.constant(c.to_tensor());
    let img = project_op(&mut g, v, 32, 1.5).unwrap();
    assert_eq!(g.value(img).data(), project(&c, 32, 1.5).unwrap().data());
}

#[test]
fn image_losses() {
    let zeros = Image::filled(32, 32, 0.0);
    let ones = Image::filled(32, 32, 1.0);
    assert_eq!(img2d_loss(&zeros, &ones).unwrap(), 1.0);
    assert_eq!(img2d_loss(&ones, &ones).unwrap(), 0.0);
    assert!(img2d_loss(&zeros, &Image::filled(16, 32, 0.0)).is_err());
    let mut rng = ChaCha8Rng::seed_from_u64(80);
    let a: Vec<f64> = (0..64).map(|_| rng.gen()).collect();
    let b: Vec<f64> = (0..64).map(|_| rng.gen()).collect();
    let mut acc = 0.0;
    for i in 0..64 {
        acc += (a[i] - b[i]) * (a[i] - b[i]);
    }
    let l = img2d_loss(&Image::new(8, 8, a).unwrap(), &Image::new(8, 8, b).unwrap()).unwrap();
    assert!((l - acc / 64.0).abs() < 1e-15);

    let c = cloud(100, 81);
    let reference = project(&c, 32, 1.5).unwrap();
    assert_eq!(proj_loss(&c, &reference, 32, 1.5).unwrap(), 0.0);
    let other = project(&cloud(100, 82), 32, 1.5).unwrap();
    let expect = img2d_loss(&other, &reference).unwrap();
    assert!((proj_loss(&cloud(100, 82), &reference, 32, 1.5).unwrap() - expect).abs() < 1e-15);
    assert!(proj_loss(&c, &Image::filled(16, 16, 0.0), 32, 1.5).is_err());
}

#[test]
fn report_totals_recompute() {
    let w = LossWeights::default();
    let (cd, img2d, proj, style) = (0.31, 0.017, 0.044, 2.5);
    let uni = LossReport::new(Stage::Uni, cd, img2d, proj, style, &w);
    let cross = LossReport::new(Stage::Cross, cd, img2d, proj, style, &w);
    assert!((uni.total - loss_uni(cd, img2d, proj)).abs() <= 1e-12);
    assert!((cross.total - loss_cross(cd, img2d, style)).abs() <= 1e-12);
    assert!((uni.total - (cd + img2d + proj)).abs() <= 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn chamfer_symmetric_nonnegative(s1 in 0u64..5000, s2 in 0u64..5000, n in 1usize..40, m in 1usize..40) {
        let (a, b) = (cloud(n, s1), cloud(m, s2 + 10_000));
        let ab = chamfer(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, chamfer(&b, &a).unwrap());
    }

    #[test]
    fn fscore_bounded_and_monotone(s1 in 0u64..5000, d1 in 1e-4f64..0.5, d2 in 1e-4f64..0.5) {
        let (a, b) = (cloud(30, s1), cloud(30, s1 + 1));
        let (lo, hi) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
        let (f_lo, f_hi) = (fscore(&a, &b, lo), fscore(&a, &b, hi));
        prop_assert!((0.0..=1.0).contains(&f_lo) && (0.0..=1.0).contains(&f_hi));
        prop_assert!(f_lo <= f_hi);
    }

    #[test]
    fn style_loss_nonnegative(seed in 0u64..5000) {
        prop_assert!(style_loss(&features(5, 4, 3, seed), 4, 3).unwrap() >= 0.0);
    }
}
