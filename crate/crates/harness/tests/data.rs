use mambatron::objective::project;
use mambatron_harness::data::*;
use proptest::prelude::*;

#[test]
fn same_seed_same_sample() {
    for class in ShapeClass::ALL {
        let a = gen_shape(class, 7).unwrap();
        let b = gen_shape(class, 7).unwrap();
        assert_eq!(a.gt.to_xyz_string(), b.gt.to_xyz_string());
        assert_eq!(a.partial.to_xyz_string(), b.partial.to_xyz_string());
        assert_eq!(a, b);
        assert_ne!(a.gt, gen_shape(class, 8).unwrap().gt);
    }
}

#[test]
fn sphere_points_lie_on_the_radius() {
    for seed in 0..5 {
        let s = gen_shape(ShapeClass::Sphere, seed).unwrap();
        assert!((0.8..=1.2).contains(&s.scale));
        for p in s.gt.points() {
            let q = canonical(&s, p);
            let r = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt();
            assert!((r - SPHERE_RADIUS).abs() <= 1e-6, "{r}");
        }
    }
}

#[test]
fn other_primitives_satisfy_their_surface_equations() {
    let tol = 1e-9;
    for seed in 0..3 {
        let b = gen_shape(ShapeClass::Box, seed).unwrap();
        for p in b.gt.points() {
            let q = canonical(&b, p);
            let inside = (0..3).all(|a| q[a].abs() <= BOX_HALF[a] + tol);
            let on_face = (0..3).any(|a| (q[a].abs() - BOX_HALF[a]).abs() <= tol);
            assert!(inside && on_face, "{q:?}");
        }
        let c = gen_shape(ShapeClass::Cylinder, seed).unwrap();
        for p in c.gt.points() {
            let q = canonical(&c, p);
            let rho = q[0].hypot(q[1]);
            let side = (rho - CYLINDER_RADIUS).abs() <= tol && q[2].abs() <= CYLINDER_HALF_HEIGHT + tol;
            let cap = (q[2].abs() - CYLINDER_HALF_HEIGHT).abs() <= tol && rho <= CYLINDER_RADIUS + tol;
            assert!(side || cap, "{q:?}");
        }
        let k = gen_shape(ShapeClass::Cone, seed).unwrap();
        for p in k.gt.points() {
            let q = canonical(&k, p);
            let rho = q[0].hypot(q[1]);
            // radius shrinks linearly from the base at -h to the apex at +h
            let expect = CONE_RADIUS * (CONE_HALF_HEIGHT - q[2]) / (2.0 * CONE_HALF_HEIGHT);
            let side = (rho - expect).abs() <= tol;
            let base = (q[2] + CONE_HALF_HEIGHT).abs() <= tol && rho <= CONE_RADIUS + tol;
            assert!(side || base, "{q:?}");
        }
    }
}

#[test]
fn partial_is_a_256_point_subset_and_view_renders_gt() {
    for class in ShapeClass::ALL {
        let s = gen_shape(class, 11).unwrap();
        assert_eq!(s.gt.len(), GT_POINTS);
        assert_eq!(s.partial.len(), PARTIAL_POINTS);
        for p in s.partial.points() {
            assert!(s.gt.points().contains(p));
        }
        assert_eq!(s.view, project(&s.gt, 32, 1.5).unwrap());
        let (lo, hi) = s.gt.bounds();
        assert!(lo.iter().chain(&hi).all(|v| v.abs() <= 1.0));
    }
}

#[test]
fn partial_lies_on_one_side_of_a_plane() {
    // the partial's centroid sits strictly away from the full cloud's
    for class in ShapeClass::ALL {
        let s = gen_shape(class, 3).unwrap();
        let mean = |c: &mambatron::geometry::PointCloud| {
            let n = c.len() as f64;
            [0, 1, 2].map(|a| c.points().iter().map(|p| p[a]).sum::<f64>() / n)
        };
        let (a, b) = (mean(&s.gt), mean(&s.partial));
        let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
        assert!(d > 0.1, "{class}: {d}");
    }
}

#[test]
fn dataset_split_sizes_and_classes() {
    let d = Dataset::generate_sized(5, 2, 1).unwrap();
    assert_eq!((d.train.len(), d.test.len()), (8, 4));
    for (i, s) in d.train.iter().enumerate() {
        assert_eq!(s.class, ShapeClass::ALL[i % 4]);
    }
    let seeds: std::collections::HashSet<u64> = d.train.iter().chain(&d.test).map(|s| s.seed).collect();
    assert_eq!(seeds.len(), 12);
    assert_eq!(d, Dataset::generate_sized(5, 2, 1).unwrap());
}

#[test]
fn directory_round_trip() {
    let d = Dataset::generate_sized(9, 1, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    d.write(dir.path()).unwrap();
    assert!(dir.path().join("train/0000_view.pgm").is_file());
    let back = Dataset::read(dir.path()).unwrap();
    assert_eq!(back, d);
}

#[test]
fn corrupt_directories_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(Dataset::read(dir.path()), Err(mambatron_harness::HarnessError::Data(_))));
    let d = Dataset::generate_sized(9, 1, 0).unwrap();
    d.write(dir.path()).unwrap();
    std::fs::write(dir.path().join("train/0002_gt.xyz"), "1 2\n").unwrap();
    let e = Dataset::read(dir.path()).unwrap_err();
    assert_eq!(e.exit_code(), 2);
    assert!("sphere".parse::<ShapeClass>().is_ok());
    assert!("torus".parse::<ShapeClass>().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn any_seed_gives_a_valid_sample(seed in any::<u64>(), class in 0usize..4) {
        let s = gen_shape(ShapeClass::ALL[class], seed).unwrap();
        prop_assert_eq!(s.partial.len(), PARTIAL_POINTS);
        prop_assert!(s.gt.points().iter().flatten().all(|v| v.abs() <= 1.0));
        prop_assert!(s.view.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
