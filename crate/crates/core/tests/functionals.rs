use std::sync::Arc;

use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::Rng;

use carnot::cubes::{build_hierarchy, sample_ball, CubeHierarchy};
use carnot::functionals::{
    alpha_cube, alpha_line, carleson_1d, carleson_sum, convexity_link, fit_affine, fit_geodesic_speeds,
    homomorphism_relation_defect, m_numerical_check, m_numerical_grid, partial_at, partial_p, telescope_check,
    theta_at, uc_energy_sides, CubeSampling, Kind, LineSegment,
};
use carnot::maps::{self, line_map, piecewise_linear, MapUnderTest, Target};
use carnot::norms::search_lambda;
use carnot::sampling::rng_for;
use carnot::{Error, GradedLieAlgebra, GroupElement, Metric};

fn h1() -> GradedLieAlgebra {
    GradedLieAlgebra::heisenberg(1).unwrap()
}

fn real(lip: f64, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> MapUnderTest {
    line_map("test", Target::RealLine, 10.0, lip, move |t| vec![f(t)]).unwrap()
}

fn unit() -> LineSegment {
    LineSegment::interval(0.0, 1.0).unwrap()
}

fn small_hierarchy(count: usize, depth: usize) -> CubeHierarchy {
    let m = Metric::n_infty(h1());
    build_hierarchy(sample_ball(&m, 1.0, count, 0).unwrap(), 0.5, depth, 0).unwrap()
}

fn light() -> CubeSampling {
    CubeSampling { directions: 8, lines: 4, pairs: 100 }
}

// A 1-Lipschitz piecewise-linear path in ℝ^d with random knots on [0, 1].
fn random_pl(rng: &mut impl Rng, d: usize, pieces: usize) -> MapUnderTest {
    let mut knots: Vec<f64> = (0..pieces - 1).map(|_| rng.random_range(0.0..1.0)).collect();
    knots.push(0.0);
    knots.push(1.0);
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    let mut values = vec![vec![0.0; d]];
    for w in knots.windows(2) {
        let dir = carnot::sampling::unit_vector(rng, d);
        let speed = rng.random_range(0.0..1.0);
        let prev = values.last().unwrap().clone();
        values.push(prev.iter().zip(&dir).map(|(p, v)| p + speed * (w[1] - w[0]) * v).collect());
    }
    let target = if d == 1 { Target::RealLine } else { Target::Euclidean(d) };
    piecewise_linear(knots, values, target).unwrap()
}

#[test]
fn line_segment_validation() {
    assert!(matches!(
        LineSegment::new(GroupElement(vec![0.0; 3]), vec![1.0, 1.0], 0.0, 1.0),
        Err(Error::NonUnitDirection(_))
    ));
    assert!(LineSegment::interval(1.0, 1.0).is_err());
    let d = unit().dyadic(3);
    assert_eq!(d.len(), 8);
    assert_abs_diff_eq!(d[7].b, 1.0);
}

#[test]
fn partial_examples() {
    let id = real(1.0, |t| t);
    assert_eq!(partial_p(&id, &LineSegment::interval(-2.0, 7.0).unwrap(), 2.0), 0.0);
    let abs = real(1.0, f64::abs);
    assert_abs_diff_eq!(partial_p(&abs, &LineSegment::interval(-1.0, 1.0).unwrap(), 2.0), 1.0, epsilon = 1e-15);
    let saw = real(1.0, |t| maps::sawtooth(t, 1.0));
    assert_abs_diff_eq!(partial_p(&saw, &LineSegment::interval(0.0, 2.0).unwrap(), 2.0), 1.0, epsilon = 1e-15);
}

#[test]
fn alpha_line_examples() {
    let affine = real(3.0, |t| 3.0 * t - 1.0);
    for eps in [0.0, 0.3, 0.9] {
        let r = alpha_line(&affine, &unit(), eps, 2.0, Kind::ThetaUc, 500, 1).unwrap();
        assert!(r.value.abs() <= 1e-12 && r.ci_half_width >= 0.0);
    }
    let id = real(1.0, |t| t);
    assert!(alpha_line(&id, &unit(), 0.1, 2.0, Kind::Partial, 500, 1).unwrap().value.abs() <= 1e-12);

    let sq = real(2.0, |t| t * t);
    assert_abs_diff_eq!(theta_at(&sq, &unit(), 0.0, 1.0, 1.0, Kind::ThetaUc).unwrap(), 0.25, epsilon = 1e-15);
    let r = alpha_line(&sq, &unit(), 0.1, 2.0, Kind::ThetaUc, 2000, 3).unwrap();
    assert!(r.value > 0.0 && r.value > 3.0 * r.ci_half_width, "{r:?}");
    let again = alpha_line(&sq, &unit(), 0.1, 2.0, Kind::ThetaUc, 2000, 3).unwrap();
    assert_eq!(r, again);
}

#[test]
fn kind_target_mismatch() {
    let id = real(1.0, |t| t);
    assert!(matches!(
        alpha_line(&id, &unit(), 0.1, 2.0, Kind::ThetaCarnot, 10, 0),
        Err(Error::KindTargetMismatch { .. })
    ));
    assert!(alpha_line(&id, &unit(), 1.0, 2.0, Kind::Partial, 10, 0).is_err());
    let t = Target::carnot(h1(), carnot::ConvexNormParams::unit(2), 0.5).unwrap();
    let curve = line_map("curve", t, 1.0, 1.0, |s| vec![s, 0.0, 0.0]).unwrap();
    assert!(alpha_line(&curve, &unit(), 0.1, 4.0, Kind::ThetaUc, 10, 0).is_err());
}

#[test]
fn telescope_identity_and_sawtooth() {
    let id = real(1.0, |t| t);
    let (lhs, rhs) = telescope_check(&id, &LineSegment::interval(0.0, 3.0).unwrap(), 2.0, 4).unwrap();
    assert_eq!(lhs, 0.0);
    assert_abs_diff_eq!(rhs, 6.0, epsilon = 1e-9);

    let saw = real(1.0, |t| maps::sawtooth(t, 1.0));
    let (lhs, rhs) = telescope_check(&saw, &LineSegment::interval(0.0, 4.0).unwrap(), 2.0, 2).unwrap();
    assert!(lhs > 0.0 && lhs <= rhs * (1.0 + 1e-6), "{lhs} {rhs}");
}

#[test]
fn telescope_rejects_scale_below_psi() {
    let mut f = real(1.0, |t| t);
    f.psi = 0.1;
    assert!(matches!(telescope_check(&f, &unit(), 2.0, 4), Err(Error::LldScaleViolated { .. })));
}

#[test]
fn telescope_random_maps() {
    for trial in 0..100u64 {
        let mut rng = rng_for(40, trial);
        let d = 1 + (trial % 3) as usize;
        let f = random_pl(&mut rng, d, 12);
        for m in [2, 4, 6] {
            let (lhs, rhs) = telescope_check(&f, &unit(), 2.0, m).unwrap();
            assert!(lhs <= rhs * (1.0 + 1e-6), "trial {trial} m {m}: {lhs} {rhs}");
        }
    }
}

#[test]
fn carleson_1d_bound() {
    for trial in 0..6u64 {
        let mut rng = rng_for(41, trial);
        let f = random_pl(&mut rng, 2, 10);
        for eps in [0.1, 0.3] {
            for m in 0..=5 {
                let (lhs, rhs) = carleson_1d(&f, &unit(), eps, 2.0, m, 60, trial).unwrap();
                assert!(lhs <= rhs * (1.0 + 1e-6), "trial {trial} ε {eps} m {m}: {lhs} {rhs}");
            }
        }
    }
    let saw = real(1.0, |t| maps::sawtooth(t, 0.1));
    let (lhs, rhs) = carleson_1d(&saw, &unit(), 0.1, 2.0, 5, 200, 0).unwrap();
    assert!(lhs > 0.0 && lhs <= rhs);
}

#[test]
fn uc_energy_on_random_maps() {
    for trial in 0..1000u64 {
        let mut rng = rng_for(42, trial);
        let f = random_pl(&mut rng, 1 + (trial % 3) as usize, 8);
        let (lhs, rhs) = uc_energy_sides(&f, &unit(), 6).unwrap();
        assert!(lhs >= rhs * (1.0 - 1e-9), "trial {trial}: {lhs} {rhs}");
    }
}

#[test]
fn euclidean_link_holds() {
    for trial in 0..20u64 {
        let mut rng = rng_for(43, trial);
        let f = random_pl(&mut rng, 3, 10);
        let r = convexity_link(&f, &unit(), 500, 1e-9, trial).unwrap();
        assert_eq!(r.violations, 0, "{r:?}");
        assert_abs_diff_eq!(r.factor, 0.25);
    }
    // ℓ_4: p = 4, K = 1; ℓ_1.5: p = 2, K = √2.
    for q in [4.0, 1.5] {
        let target = Target::lp(2, q).unwrap();
        let f = line_map("curve", target, 1.0, 2.0, |t| vec![t.sin(), (2.0 * t).cos()]).unwrap();
        let r = convexity_link(&f, &LineSegment::interval(-1.0, 1.0).unwrap(), 2000, 1e-9, 0).unwrap();
        assert_eq!(r.violations, 0, "q {q}: {r:?}");
    }
}

#[test]
fn carnot_link_holds() {
    let alg = h1();
    let s = search_lambda(&alg, 30, 0).unwrap();
    let target = Target::carnot(alg.clone(), s.params.clone(), s.c).unwrap();
    let (p, k) = target.convexity();
    assert_eq!(p, 4.0);
    assert_abs_diff_eq!(k / 2f64.powf(p), 1.0 / s.c, epsilon = 1e-12);
    let curves: Vec<MapUnderTest> = vec![
        line_map("helix", target.clone(), 1.0, 1.0, |t| vec![t.cos(), t.sin(), 0.3 * t]).unwrap(),
        line_map("vertical", target.clone(), 1.0, 1.0, |t| vec![0.0, t, t * t]).unwrap(),
        line_map("zigzag", target, 1.0, 1.0, |t| vec![maps::sawtooth(t, 0.2), 0.5 * t, (3.0 * t).sin()]).unwrap(),
    ];
    for f in &curves {
        let r = convexity_link(f, &LineSegment::interval(-1.0, 1.0).unwrap(), 2000, 1e-9, 1).unwrap();
        assert_eq!(r.violations, 0, "{}: {r:?}", f.name);
    }
}

#[test]
fn alpha_cube_examples() {
    let hier = small_hierarchy(1500, 2);
    let m = hier.cloud.metric.clone();
    let c = maps::constant(m.clone(), 1.0, vec![2.0]);
    for kind in [Kind::Partial, Kind::ThetaUc] {
        let a = alpha_cube(&c, &hier, 1, 0, 0.1, 2.0, kind, light(), 0).unwrap();
        assert_eq!(a.report.value, 0.0);
    }
    let aff = maps::affine(m.clone(), 1.0, vec![vec![0.6, -0.8]], vec![0.5]);
    let a = alpha_cube(&aff, &hier, 1, 0, 0.1, 2.0, Kind::ThetaUc, light(), 1).unwrap();
    assert!(a.report.value.abs() <= 2e-3 * aff.lip_psi.powi(2));
    assert!(a.lines_hit > 0 && a.lines_hit <= a.lines_sampled);
    let pi = maps::projection(m, 1.0);
    let a = alpha_cube(&pi, &hier, 2, 0, 0.1, 2.0, Kind::Partial, light(), 2).unwrap();
    assert!(a.report.value.abs() <= 2e-3);
    assert!(alpha_cube(&pi, &hier, 2, 10_000, 0.1, 2.0, Kind::Partial, light(), 2).is_err());
}

#[test]
fn beta_bounded_by_alpha_on_cubes() {
    let hier = small_hierarchy(1500, 2);
    let f = maps::bump(hier.cloud.metric.clone(), 1.0);
    let (p, k) = f.target.convexity();
    for (level, id) in [(0, 0), (1, 0), (1, 1), (2, 3)] {
        let a = alpha_cube(&f, &hier, level, id, 0.1, p, Kind::Partial, light(), 5).unwrap();
        let b = alpha_cube(&f, &hier, level, id, 0.1, p, Kind::ThetaUc, light(), 5).unwrap();
        assert!(b.report.value <= k.powf(p) / 2f64.powf(p) * a.report.value * (1.0 + 1e-9) + 1e-15);
    }
}

#[test]
fn carleson_examples() {
    let hier = small_hierarchy(1500, 3);
    let m = hier.cloud.metric.clone();
    let c = maps::constant(m.clone(), 1.0, vec![0.0, 1.0]);
    let t = carleson_sum(&c, &hier, (0, 0), 2, 0.1, 2.0, Kind::ThetaUc, light(), 0).unwrap();
    assert_eq!(t.total, 0.0);
    assert_eq!(t.levels.len(), 3);

    let pi = maps::projection(m.clone(), 1.0);
    let t = carleson_sum(&pi, &hier, (0, 0), 3, 0.1, 2.0, Kind::ThetaUc, light(), 0).unwrap();
    assert!(t.normalized <= 5e-3, "{t:?}");

    let bump = maps::bump(m, 1.0);
    let shallow = carleson_sum(&bump, &hier, (0, 0), 1, 0.1, 2.0, Kind::Partial, light(), 0).unwrap();
    let deep = carleson_sum(&bump, &hier, (0, 0), 3, 0.1, 2.0, Kind::Partial, light(), 0).unwrap();
    assert!(shallow.normalized > 0.0 && deep.normalized.is_finite());
    assert!(deep.normalized / shallow.normalized <= 2.0, "{} {}", shallow.normalized, deep.normalized);
}

#[test]
fn fit_affine_homomorphisms() {
    let hier = small_hierarchy(1500, 2);
    let m = hier.cloud.metric.clone();
    let pi = maps::projection(m.clone(), 1.0);
    let aff = maps::affine(m, 1.0, vec![vec![1.0, 2.0], vec![-0.5, 0.25], vec![0.0, 3.0]], vec![1.0, -2.0, 0.5]);
    for (level, id) in [(0, 0), (1, 2), (2, 5)] {
        for f in [&pi, &aff] {
            let fit = fit_affine(f, &hier, level, id, 1.0, 200, 3).unwrap();
            assert!(fit.sup_err <= 1e-9, "{} {level} {id}: {}", f.name, fit.sup_err);
            assert!(!fit.regularized);
        }
    }
    let fit = fit_affine(&aff, &hier, 1, 0, 0.5, 200, 3).unwrap();
    assert_abs_diff_eq!(fit.a[0][1], 2.0, epsilon = 1e-9);
    assert_abs_diff_eq!(fit.offset[1], -2.0, epsilon = 1e-9);
    assert!(fit_affine(&pi, &hier, 1, 0, 0.0, 100, 0).is_err());
}

#[test]
fn fit_affine_translation_invariant() {
    let hier = small_hierarchy(1500, 2);
    let f = maps::bump(hier.cloud.metric.clone(), 1.0);
    let g = f.translated(vec![17.5]);
    for (level, id) in [(0, 0), (1, 1), (2, 2)] {
        let a = fit_affine(&f, &hier, level, id, 0.8, 300, 9).unwrap();
        let b = fit_affine(&g, &hier, level, id, 0.8, 300, 9).unwrap();
        assert!((a.sup_err - b.sup_err).abs() <= 1e-12, "{} {}", a.sup_err, b.sup_err);
    }
}

#[test]
fn fit_affine_sawtooth_is_flat() {
    let m = Metric::n_infty(h1());
    let hier = build_hierarchy(sample_ball(&m, 1.0, 2000, 0).unwrap(), 0.5, 1, 0).unwrap();
    let w = 1.0 / 16.0;
    let f = maps::sawtooth_pi(m, 1.0, w);
    let fit = fit_affine(&f, &hier, 0, 0, 1.0, 4000, 0).unwrap();
    let r = hier.ball_radius(&hier.levels[0][0]);
    let direct = 0.5 * w / r;
    assert!(fit.slope() <= 0.05, "{}", fit.slope());
    assert!((fit.normalized / direct - 1.0).abs() <= 0.1, "{} {direct}", fit.normalized);
}

#[test]
fn geodesic_speed_examples() {
    let hier = small_hierarchy(1500, 2);
    let m = hier.cloud.metric.clone();
    let dirs = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8]];
    let pi = maps::projection(m.clone(), 1.0);
    let s = fit_geodesic_speeds(&pi, &hier, 1, 0, &dirs, 1.0, 100, 0).unwrap();
    assert!(s.speeds.iter().all(|w| (w - 1.0).abs() <= 1e-9));
    assert!(s.sup_err <= 1e-9);
    let c = maps::constant(m.clone(), 1.0, vec![3.0]);
    let s = fit_geodesic_speeds(&c, &hier, 1, 0, &dirs, 1.0, 100, 0).unwrap();
    assert!(s.speeds.iter().all(|&w| w == 0.0) && s.sup_err == 0.0);
    assert!(fit_geodesic_speeds(&pi, &hier, 1, 0, &[vec![1.0, 1.0]], 1.0, 10, 0).is_err());

    let e = maps::euclidean_identity(m, 1.0).unwrap();
    let far = hier.levels[2].iter().max_by(|a, b| {
        let na = hier.cloud.metric.norm(hier.center(a));
        let nb = hier.cloud.metric.norm(hier.center(b));
        na.total_cmp(&nb)
    });
    let far = far.unwrap();
    let errs: Vec<f64> = [1.0, 0.5, 0.25]
        .iter()
        .map(|&sh| {
            let s = fit_geodesic_speeds(&e, &hier, 2, far.id, &dirs, sh, 200, 1).unwrap();
            assert!(s.speeds.iter().all(|w| (w - 1.0).abs() < 0.2), "{:?}", s.speeds);
            s.sup_err
        })
        .collect();
    assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
}

#[test]
fn relation_defect_examples() {
    let a = h1();
    let id = homomorphism_relation_defect(&[vec![1.0, 0.0], vec![0.0, 1.0]], &a, &a).unwrap();
    assert!(id.defect <= 1e-12 && !id.degenerate && id.rank == 2);
    let r2 = GradedLieAlgebra::abelian(2).unwrap();
    assert!(homomorphism_relation_defect(&[vec![1.0, 0.0], vec![0.0, 1.0]], &a, &r2).unwrap().defect <= 1e-12);
    let xx = homomorphism_relation_defect(&[vec![1.0, 0.0], vec![1.0, 0.0]], &a, &a).unwrap();
    assert!(xx.defect <= 1e-12 && xx.degenerate && xx.rank == 1);
    // Abelian sources force commuting images.
    let bad = homomorphism_relation_defect(&[vec![1.0, 0.0], vec![0.0, 1.0]], &r2, &a).unwrap();
    assert!(bad.defect > 0.5);
    let e = GradedLieAlgebra::engel().unwrap();
    assert!(homomorphism_relation_defect(&[vec![1.0, 0.0], vec![0.0, 1.0]], &a, &e).unwrap().defect > 0.5);
    assert!(homomorphism_relation_defect(&[vec![1.0, 0.0]], &a, &a).is_err());
}

#[test]
fn m_numerical_examples() {
    assert!(m_numerical_check(1.0, 1.0, 1.0, 0.0).unwrap());
    let eps = (0.5f64 * (1.1 * 1.1 + 0.9 * 0.9) - 1.0).sqrt();
    assert!(m_numerical_check(1.1, 0.9, 1.0, eps).unwrap());
    assert!(m_numerical_check(1.0, 1.0, 1.5, 0.0).is_err());
    assert!(m_numerical_check(-1.0, 1.0, 0.0, 0.0).is_err());
    let (checked, bad) = m_numerical_grid(40, &[0.0, 0.05, 0.3]);
    assert!(checked > 40_000);
    assert_eq!(bad, 0);
}

// Perturbing the endpoints by at most ρ keeps ∂ above a fifth of its value.
#[test]
fn partial_stable_under_perturbation() {
    let mut tested = 0;
    let mut trial = 0u64;
    while tested < 1000 {
        let mut rng = rng_for(44, trial);
        trial += 1;
        let f = random_pl(&mut rng, 2, 6);
        let line = LineSegment::interval(-0.5, 1.5).unwrap();
        let c = rng.random_range(0.0..0.5);
        let d = rng.random_range(0.5..1.0);
        let base = partial_at(&f, &line, c, d, 2.0);
        let lip = f.lip_psi;
        let rho = base * (d - c) / (30.0 * lip * lip);
        if !(base > 1e-6) {
            continue;
        }
        let s = c + rng.random_range(-rho..=rho);
        let t = d + rng.random_range(-rho..=rho);
        let moved = partial_at(&f, &line, s, t, 2.0);
        assert!(moved > base / 5.0, "trial {trial}: {moved} vs {base}");
        tested += 1;
    }
}

#[test]
fn lld_contract_of_registry_maps() {
    let m = Metric::n_infty(h1());
    for name in ["pi", "euclidean_identity", "sawtooth_pi", "bump"] {
        let f = maps::registry(name, m.clone(), 1.0).unwrap();
        assert!(f.lld_excess(2000, 7).unwrap() <= 1.0 + 1e-6, "{name}");
    }
    assert!(matches!(maps::registry("nope", m, 1.0), Err(Error::UnknownMap(_))));
}

fn custom_map() -> MapUnderTest {
    let m = Metric::n_infty(h1());
    MapUnderTest::new("twist", m, 1.0, Target::Euclidean(2), 0.0, 2.0, Arc::new(|g: &GroupElement| vec![g.0[0], g.0[2]]))
}

#[test]
fn custom_maps_are_accepted() {
    let hier = small_hierarchy(800, 1);
    let f = custom_map();
    let a = alpha_cube(&f, &hier, 1, 0, 0.1, 2.0, Kind::Partial, light(), 0).unwrap();
    assert!(a.report.value.is_finite());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn affine_lines_have_zero_defect(a in -3.0..3.0f64, b in -3.0..3.0f64, lo in -2.0..0.0f64, len in 0.1..3.0f64) {
        let f = real(a.abs().max(1e-3), move |t| a * t + b);
        let line = LineSegment::interval(lo, lo + len).unwrap();
        prop_assert!(partial_p(&f, &line, 2.0).abs() <= 1e-9);
        prop_assert!(theta_at(&f, &line, lo, lo + len, 2.0, Kind::ThetaUc).unwrap() <= 1e-20);
    }

    #[test]
    fn telescope_on_generated_maps(seed in 0u64..10_000, m in 1u32..6) {
        let mut rng = rng_for(seed, 0);
        let f = random_pl(&mut rng, 2, 9);
        let (lhs, rhs) = telescope_check(&f, &unit(), 2.0, m).unwrap();
        prop_assert!(lhs <= rhs * (1.0 + 1e-6));
    }
}
