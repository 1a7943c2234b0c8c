use carnot::cubes::{build_hierarchy, sample_ball, verify_hierarchy, PointCloud};
use carnot::{ConvexNormParams, Error, GradedLieAlgebra, GroupElement, Metric};

fn h1_metric() -> Metric {
    Metric::n_infty(GradedLieAlgebra::heisenberg(1).unwrap())
}

fn grid_cloud(n: usize) -> PointCloud {
    let r1 = Metric::n_infty(GradedLieAlgebra::abelian(1).unwrap());
    let pts = (0..n).map(|i| GroupElement(vec![i as f64 / n as f64])).collect();
    PointCloud::from_points(r1, pts, 1.0).unwrap()
}

#[test]
fn sample_ball_line() {
    let m = Metric::n_infty(GradedLieAlgebra::abelian(1).unwrap());
    let c = sample_ball(&m, 1.0, 3, 4).unwrap();
    assert_eq!(c.len(), 3);
    assert!(c.points.iter().all(|p| p.0[0].abs() <= 1.0));
    assert!(sample_ball(&m, 1.0, 0, 4).is_err());
}

#[test]
fn sample_ball_membership_and_determinism() {
    for m in [h1_metric(), Metric::convex(GradedLieAlgebra::heisenberg(1).unwrap(), ConvexNormParams::unit(2)).unwrap()] {
        let c = sample_ball(&m, 1.0, 10_000, 2).unwrap();
        assert!(c.points.iter().all(|p| m.norm(p) <= 1.0 + 1e-9));
        let again = sample_ball(&m, 1.0, 10_000, 2).unwrap();
        assert_eq!(c.points, again.points);
    }
}

#[test]
fn sample_ball_doubling_ratio() {
    let m = h1_metric();
    let c = sample_ball(&m, 1.0, 10_000, 9).unwrap();
    let inner = c.points.iter().filter(|p| m.norm(p) <= 0.5).count();
    let ratio = c.len() as f64 / inner as f64;
    assert!((ratio / 16.0 - 1.0).abs() < 0.15, "{ratio}");
}

#[test]
fn from_points_rejects_outside() {
    let r1 = Metric::n_infty(GradedLieAlgebra::abelian(1).unwrap());
    assert!(matches!(
        PointCloud::from_points(r1, vec![GroupElement(vec![2.0])], 1.0),
        Err(Error::Precondition(_))
    ));
}

#[test]
fn build_rejects_bad_parameters() {
    assert!(build_hierarchy(grid_cloud(8), 0.7, 2, 0).is_err());
    assert!(build_hierarchy(grid_cloud(8), 0.5, 0, 0).is_err());
}

#[test]
fn grid_cubes_are_contiguous_blocks() {
    let n = 256;
    let h = build_hierarchy(grid_cloud(n), 0.5, 3, 0).unwrap();
    for (k, level) in h.levels.iter().enumerate() {
        let count = level.len() as f64;
        let expect = 2f64.powi(k as i32);
        assert!(count >= expect / 2.0 && count <= expect * 2.0, "level {k}: {count}");
        for c in level {
            let lo = *c.members.iter().min().unwrap();
            let hi = *c.members.iter().max().unwrap();
            assert_eq!(hi - lo + 1, c.members.len(), "level {k} cube {} is not contiguous", c.id);
            assert!(c.members.len() as f64 / n as f64 <= 3.0 / expect);
        }
    }
    assert!(verify_hierarchy(&h).exact_properties_hold());
}

#[test]
fn depth_one_partition() {
    let c = sample_ball(&h1_metric(), 1.0, 500, 1).unwrap();
    let h = build_hierarchy(c, 0.5, 1, 1).unwrap();
    assert_eq!(h.levels.len(), 2);
    let r = verify_hierarchy(&h);
    assert!(r.partition_failures.is_empty() && r.nesting_failures.is_empty());
    let total: usize = h.levels[1].iter().map(|c| c.members.len()).sum();
    assert_eq!(total, 500);
}

#[test]
fn mutated_membership_is_reported() {
    let c = sample_ball(&h1_metric(), 1.0, 800, 3).unwrap();
    let mut h = build_hierarchy(c, 0.5, 2, 3).unwrap();
    assert!(verify_hierarchy(&h).exact_properties_hold());
    let victim = h.levels[2].iter().position(|c| c.members.len() > 1).unwrap();
    let moved = h.levels[2][victim].members.pop().unwrap();
    let other = (victim + 1) % h.levels[2].len();
    h.levels[2][other].members.push(moved);
    h.levels[2][other].members.push(moved);
    let r = verify_hierarchy(&h);
    assert!(!r.partition_failures.is_empty());
    assert!(r.partition_failures.iter().all(|&(l, _)| l == 2));
    assert!(r.partition_failures.contains(&(2, other)));
}

#[test]
fn nesting_and_diameter_bounds() {
    let c = sample_ball(&h1_metric(), 1.0, 3000, 5).unwrap();
    let h = build_hierarchy(c, 0.25, 3, 5).unwrap();
    let r = verify_hierarchy(&h);
    assert!(r.exact_properties_hold(), "{r:?}");
    for (k, level) in h.levels.iter().enumerate().skip(1) {
        for cube in level {
            assert!(cube.diameter <= h.a1_hat * h.scale(k) * (1.0 + 1e-12));
            let parent = &h.levels[k - 1][cube.parent.unwrap()];
            assert!(parent.children.contains(&cube.id));
            let mut pm = parent.members.clone();
            pm.sort_unstable();
            assert!(cube.members.iter().all(|m| pm.binary_search(m).is_ok()));
        }
    }
    let d = h.descendants((1, 0), 3);
    assert!(d.iter().all(|&i| {
        let p2 = h.levels[3][i].parent.unwrap();
        h.levels[2][p2].parent == Some(0)
    }));
}

#[test]
fn heisenberg_eighth_scale_audit() {
    let c = sample_ball(&h1_metric(), 1.0, 10_000, 0).unwrap();
    let h = build_hierarchy(c, 0.125, 3, 0).unwrap();
    let r = verify_hierarchy(&h);
    assert!(r.exact_properties_hold());
    assert!(r.a0_hat > 0.0 && r.a1_hat / r.a0_hat <= 64.0, "{} {}", r.a0_hat, r.a1_hat);
}

#[test]
fn cardinality_scales_with_homogeneous_dimension() {
    let c = sample_ball(&h1_metric(), 1.0, 20_000, 0).unwrap();
    let h = build_hierarchy(c, 0.5, 3, 0).unwrap();
    let r = verify_hierarchy(&h);
    assert!((r.cardinality_exponent - 4.0).abs() <= 0.5, "{}", r.cardinality_exponent);
}

#[test]
fn hierarchy_is_deterministic() {
    let build = || {
        let c = sample_ball(&h1_metric(), 1.0, 1500, 8).unwrap();
        build_hierarchy(c, 0.25, 2, 8).unwrap()
    };
    let (a, b) = (build(), build());
    for (la, lb) in a.levels.iter().zip(&b.levels) {
        let ma: Vec<_> = la.iter().map(|c| (c.center, c.members.clone())).collect();
        let mb: Vec<_> = lb.iter().map(|c| (c.center, c.members.clone())).collect();
        assert_eq!(ma, mb);
    }
}
