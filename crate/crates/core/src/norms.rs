//! Homogeneous norms on graded groups: the box norm `N∞`, a uniformly convex
//! norm built by recursion over layers, the non-horizontality gauge `NH`, and
//! the search for parameters witnessing midpoint convexity.

use serde::{Deserialize, Serialize};

use crate::cc::{cc_upper, CcOptions};
use crate::error::{check_dim, Error, Result};
use crate::lie::{GradedLieAlgebra, GroupElement};
use crate::optim::PatternSearch;
use crate::sampling::{in_box, rng_for};

/// Layer weights `λ_2, ..., λ_s` of the convex norm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexNormParams {
    pub lambdas: Vec<f64>,
}

impl ConvexNormParams {
    pub fn new(lambdas: Vec<f64>) -> Result<Self> {
        if lambdas.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::InvalidParameter("convex norm weights must be positive".into()));
        }
        Ok(ConvexNormParams { lambdas })
    }

    /// All weights equal to one, for an algebra of the given step.
    pub fn unit(step: usize) -> Self {
        ConvexNormParams { lambdas: vec![1.0; step.saturating_sub(1)] }
    }
}

/// Which homogeneous distance to use.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MetricChoice {
    NInfty { weights: Vec<f64> },
    Convex { params: ConvexNormParams },
    CcEstimate { options: CcOptions },
}

/// A left-invariant homogeneous distance on a group.
#[derive(Clone, Debug)]
pub struct Metric {
    alg: GradedLieAlgebra,
    choice: MetricChoice,
}

impl Metric {
    pub fn new(alg: GradedLieAlgebra, choice: MetricChoice) -> Result<Self> {
        match &choice {
            MetricChoice::NInfty { weights } => {
                check_dim(alg.step(), weights.len())?;
                if weights.iter().any(|&w| !(w > 0.0)) {
                    return Err(Error::InvalidParameter("N∞ weights must be positive".into()));
                }
            }
            MetricChoice::Convex { params } => {
                check_dim(alg.step() - 1, params.lambdas.len())?;
                ConvexNormParams::new(params.lambdas.clone())?;
            }
            MetricChoice::CcEstimate { .. } => {}
        }
        Ok(Metric { alg, choice })
    }

    /// `N∞` with unit weights.
    pub fn n_infty(alg: GradedLieAlgebra) -> Self {
        let weights = vec![1.0; alg.step()];
        Metric { alg, choice: MetricChoice::NInfty { weights } }
    }

    pub fn convex(alg: GradedLieAlgebra, params: ConvexNormParams) -> Result<Self> {
        Self::new(alg, MetricChoice::Convex { params })
    }

    pub fn algebra(&self) -> &GradedLieAlgebra {
        &self.alg
    }

    pub fn choice(&self) -> &MetricChoice {
        &self.choice
    }

    pub fn norm(&self, g: &GroupElement) -> f64 {
        match &self.choice {
            MetricChoice::NInfty { weights } => norm_infty(&self.alg, g, weights),
            MetricChoice::Convex { params } => convex_norm(&self.alg, g, params),
            MetricChoice::CcEstimate { options } => {
                let id = GroupElement::identity(self.alg.dim());
                cc_upper(&self.alg, &id, g, options).map_or(f64::INFINITY, |r| r.distance)
            }
        }
    }

    /// `d(g, h) = N(g⁻¹h)`.
    pub fn dist(&self, g: &GroupElement, h: &GroupElement) -> f64 {
        match self.alg.relative(g, h) {
            Ok(r) => self.norm(&r),
            Err(_) => f64::NAN,
        }
    }

    /// `NH(g) = d(π̃(g), g)`, measuring how far `g` is from horizontal.
    pub fn nh(&self, g: &GroupElement) -> f64 {
        self.dist(&self.alg.horizontal_lift(g), g)
    }

    /// Per-coordinate half widths of a box containing the ball of radius `r` about 0.
    pub fn coordinate_box(&self, r: f64) -> Result<Vec<f64>> {
        let per_layer: Vec<f64> = match &self.choice {
            MetricChoice::NInfty { weights } => weights
                .iter()
                .enumerate()
                .map(|(k, w)| (r / w).powi(k as i32 + 1))
                .collect(),
            MetricChoice::Convex { params } => {
                // N ≥ |x_1| and N ≥ λ_k^{1/(2k!)} |x_k|^{1/k}.
                let mut v = vec![r];
                for (i, &l) in params.lambdas.iter().enumerate() {
                    let k = i + 2;
                    let e = 2.0 * factorial(k - 1);
                    v.push(r.powi(k as i32) / l.powf(1.0 / e));
                }
                v
            }
            MetricChoice::CcEstimate { .. } => {
                return Err(Error::InvalidParameter(
                    "ball sampling needs an explicit norm, not a CC estimate".into(),
                ))
            }
        };
        Ok((0..self.alg.dim()).map(|i| per_layer[self.alg.layer_of(i) - 1]).collect())
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|x| x as f64).product()
}

/// Euclidean norm computed without intermediate underflow or overflow.
pub fn euclid(v: &[f64]) -> f64 {
    if v.len() == 1 {
        return v[0].abs();
    }
    let m = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if m == 0.0 || !m.is_finite() {
        return m;
    }
    m * v.iter().map(|x| (x / m) * (x / m)).sum::<f64>().sqrt()
}

fn layer_norms(alg: &GradedLieAlgebra, g: &GroupElement) -> Vec<f64> {
    (1..=alg.step()).map(|k| euclid(&g.0[alg.layer_range(k)])).collect()
}

/// `N∞(g) = max_i w_i |g_i|^{1/i}` with `|g_i|` the Euclidean norm of layer `i`.
pub fn norm_infty(alg: &GradedLieAlgebra, g: &GroupElement, weights: &[f64]) -> f64 {
    let mut best: f64 = 0.0;
    for (k, w) in weights.iter().enumerate() {
        let x = euclid(&g.0[alg.layer_range(k + 1)]);
        let v = match k {
            0 => x,
            1 => x.sqrt(),
            _ => x.powf(1.0 / (k as f64 + 1.0)),
        };
        best = best.max(w * v);
    }
    best
}

/// The convex norm `N_s(g)`.
pub fn convex_norm(alg: &GradedLieAlgebra, g: &GroupElement, params: &ConvexNormParams) -> f64 {
    *convex_norm_levels(alg, g, params).last().expect("at least one layer")
}

/// All partial norms `N_1(g), ..., N_s(g)`.
///
/// The input is first dilated so its largest homogeneous layer size is one;
/// this keeps the powers `2k!` in range, and degree-one homogeneity undoes
/// the scaling exactly.
pub fn convex_norm_levels(
    alg: &GradedLieAlgebra,
    g: &GroupElement,
    params: &ConvexNormParams,
) -> Vec<f64> {
    let x = layer_norms(alg, g);
    let scale = x
        .iter()
        .enumerate()
        .map(|(i, v)| v.powf(1.0 / (i as f64 + 1.0)))
        .fold(0.0, f64::max);
    if scale == 0.0 || !scale.is_finite() {
        return vec![if scale == 0.0 { 0.0 } else { f64::INFINITY }; x.len()];
    }
    let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v / scale.powi(i as i32 + 1)).collect();

    // E_k = N_k^{2k!}.
    let mut levels = Vec::with_capacity(y.len());
    let mut e = y[0] * y[0];
    levels.push(y[0] * scale);
    for k in 2..=y.len() {
        let lam = params.lambdas[k - 2];
        e = e.powi(k as i32) + lam * y[k - 1].powf(2.0 * factorial(k - 1));
        levels.push(e.powf(1.0 / (2.0 * factorial(k))) * scale);
    }
    levels
}

/// Exponent `2 s!` of the convexity inequality.
pub fn convexity_exponent(alg: &GradedLieAlgebra) -> f64 {
    2.0 * factorial(alg.step())
}

// The two sides of the midpoint inequality: A = ½(N(g)^q + N(h)^q) − (N(gh)/2)^q
// and B = 2^{−q}(|g_1 − h_1|^q + NH(gh)^q).
fn defect_parts(metric: &Metric, g: &GroupElement, h: &GroupElement, q: f64) -> (f64, f64) {
    let alg = metric.algebra();
    let gh = GroupElement(alg.bch(&g.0, &h.0));
    let a = 0.5 * (metric.norm(g).powf(q) + metric.norm(h).powf(q)) - (0.5 * metric.norm(&gh)).powf(q);
    let d1 = alg.horizontal_dim();
    let diff = g.0[..d1].iter().zip(&h.0[..d1]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let b = 0.5f64.powf(q) * (diff.powf(q) + metric.nh(&gh).powf(q));
    (a, b)
}

/// `A − C·B` for the midpoint convexity inequality of the convex norm.
pub fn midpoint_convexity_defect(
    alg: &GradedLieAlgebra,
    g: &GroupElement,
    h: &GroupElement,
    params: &ConvexNormParams,
    c: f64,
) -> Result<f64> {
    check_dim(alg.dim(), g.dim())?;
    check_dim(alg.dim(), h.dim())?;
    let metric = Metric::convex(alg.clone(), params.clone())?;
    let (a, b) = defect_parts(&metric, g, h, convexity_exponent(alg));
    Ok(a - c * b)
}

/// Result of [`search_lambda`].
#[derive(Clone, Debug, Serialize)]
pub struct LambdaSearch {
    pub params: ConvexNormParams,
    /// Constant returned for use (a safety fraction of `c_raw`).
    pub c: f64,
    /// Smallest ratio `A/B` found, i.e. the largest admissible constant seen.
    pub c_raw: f64,
    /// Minimum defect at `c` over the verification sample.
    pub min_defect: f64,
    pub samples: usize,
    pub seed: u64,
}

impl LambdaSearch {
    pub fn succeeded(&self) -> bool {
        self.c > 0.0 && self.min_defect >= 0.0
    }
}

/// Fraction of the best sampled constant that is returned.
pub const LAMBDA_SAFETY: f64 = 0.5;
const SEARCH_PAIRS: usize = 1500;
const VERIFY_PAIRS: usize = 10_000;
// Relative gain a candidate needs to replace the incumbent; flat scores keep the start.
const IMPROVEMENT: f64 = 1e-6;

fn min_ratio(metric: &Metric, pairs: &[(GroupElement, GroupElement)], q: f64) -> (f64, usize) {
    let mut best = (f64::INFINITY, 0);
    for (i, (g, h)) in pairs.iter().enumerate() {
        let (a, b) = defect_parts(metric, g, h, q);
        let r = if b > 1e-300 { a / b } else if a < 0.0 { f64::NEG_INFINITY } else { continue };
        if r < best.0 {
            best = (r, i);
        }
    }
    best
}

// Local descent on the ratio A/B starting from a given pair.
fn adversarial(metric: &Metric, g: &GroupElement, h: &GroupElement, q: f64, evals: usize) -> f64 {
    let n = g.dim();
    let mut x0 = g.0.clone();
    x0.extend_from_slice(&h.0);
    let mut f = |x: &[f64]| {
        let (a, b) = defect_parts(metric, &GroupElement(x[..n].to_vec()), &GroupElement(x[n..].to_vec()), q);
        if b > 1e-300 {
            a / b
        } else {
            f64::INFINITY
        }
    };
    let mut ps = PatternSearch::new(x0, &mut f, 0.05, 1e-7).with_bounds(vec![-1.0; 2 * n], vec![1.0; 2 * n]);
    ps.run(&mut f, evals);
    ps.fx
}

fn sample_pairs(dim: usize, count: usize, seed: u64, offset: u64) -> Vec<(GroupElement, GroupElement)> {
    let bounds = vec![1.0; dim];
    (0..count)
        .map(|i| {
            let mut rng = rng_for(seed, offset + i as u64);
            (GroupElement(in_box(&mut rng, &bounds)), GroupElement(in_box(&mut rng, &bounds)))
        })
        .collect()
}

/// Searches for layer weights and a constant witnessing midpoint convexity.
///
/// `budget` is the number of weight vectors evaluated. Each evaluation takes
/// the minimum of `A/B` over a fixed seeded sample plus an adversarial descent
/// from the worst pair; the weights maximizing that minimum are kept.
pub fn search_lambda(alg: &GradedLieAlgebra, budget: usize, seed: u64) -> Result<LambdaSearch> {
    if budget == 0 {
        return Err(Error::InvalidParameter("search budget must be at least 1".into()));
    }
    let s = alg.step();
    let q = convexity_exponent(alg);
    let verify = sample_pairs(alg.dim(), VERIFY_PAIRS, seed, 1 << 32);

    if s == 1 {
        // Parallelogram law: A = |g − h|²/4 = B exactly.
        let params = ConvexNormParams { lambdas: vec![] };
        let metric = Metric::convex(alg.clone(), params.clone())?;
        let min_defect = verify
            .iter()
            .map(|(g, h)| {
                let (a, b) = defect_parts(&metric, g, h, q);
                a - b
            })
            .fold(f64::INFINITY, f64::min);
        return Ok(LambdaSearch { params, c: 1.0, c_raw: 1.0, min_defect, samples: VERIFY_PAIRS, seed });
    }

    let pairs = sample_pairs(alg.dim(), SEARCH_PAIRS, seed, 0);
    let mut evaluations = 0usize;
    let score = |logl: &[f64], evaluations: &mut usize| -> f64 {
        *evaluations += 1;
        let params = ConvexNormParams { lambdas: logl.iter().map(|x| 10f64.powf(*x)).collect() };
        let metric = Metric::convex(alg.clone(), params).expect("positive weights");
        let (r, i) = min_ratio(&metric, &pairs, q);
        if !r.is_finite() {
            return r;
        }
        r.min(adversarial(&metric, &pairs[i].0, &pairs[i].1, q, 300))
    };

    let m = s - 1;
    let mut best = vec![0.0; m];
    let mut best_score = score(&best, &mut evaluations);
    // Coordinate-wise log grid.
    'grid: for k in 0..m {
        for step in -6..=6 {
            if evaluations >= budget {
                break 'grid;
            }
            let mut cand = best.clone();
            cand[k] = 0.5 * step as f64;
            let sc = score(&cand, &mut evaluations);
            if sc > best_score + IMPROVEMENT * best_score.abs().max(1e-12) {
                best_score = sc;
                best = cand;
            }
        }
    }
    // Refinement with halving steps, then seeded perturbations.
    let mut h = 0.25;
    while evaluations < budget && h > 1e-3 {
        let mut improved = false;
        for k in 0..m {
            for dir in [1.0, -1.0] {
                if evaluations >= budget {
                    break;
                }
                let mut cand = best.clone();
                cand[k] += dir * h;
                let sc = score(&cand, &mut evaluations);
                if sc > best_score + IMPROVEMENT * best_score.abs().max(1e-12) {
                    best_score = sc;
                    best = cand;
                    improved = true;
                }
            }
        }
        if !improved {
            h *= 0.5;
        }
    }
    let mut rng = rng_for(seed, 1 << 40);
    while evaluations < budget {
        let cand: Vec<f64> = best.iter().map(|x| x + 0.1 * crate::sampling::normal(&mut rng)).collect();
        let sc = score(&cand, &mut evaluations);
        if sc > best_score + IMPROVEMENT * best_score.abs().max(1e-12) {
            best_score = sc;
            best = cand;
        }
    }

    let params = ConvexNormParams { lambdas: best.iter().map(|x| 10f64.powf(*x)).collect() };
    let c_raw = best_score;
    let c = if c_raw > 0.0 { LAMBDA_SAFETY * c_raw } else { 0.0 };
    let metric = Metric::convex(alg.clone(), params.clone())?;
    let min_defect = verify
        .iter()
        .map(|(g, h)| {
            let (a, b) = defect_parts(&metric, g, h, q);
            a - c * b
        })
        .fold(f64::INFINITY, f64::min);
    Ok(LambdaSearch { params, c, c_raw, min_defect, samples: VERIFY_PAIRS, seed })
}

/// Sampled supremum of `d(x,z) / (d(x,y) + d(y,z))`.
///
/// By left invariance the triple is `(0, a, ab)`. Each sample is a seeded
/// start followed by a short local ascent; the running maximum is returned,
/// so the estimate never decreases as `samples` grows.
pub fn quasi_triangle_constant(metric: &Metric, samples: usize, seed: u64) -> Result<f64> {
    if samples == 0 {
        return Err(Error::InvalidParameter("samples must be at least 1".into()));
    }
    let alg = metric.algebra();
    let n = alg.dim();
    let mut best: f64 = 0.0;
    for i in 0..samples {
        let mut rng = rng_for(seed, i as u64);
        let mut x0 = in_box(&mut rng, &vec![1.0; n]);
        x0.extend(in_box(&mut rng, &vec![1.0; n]));
        let mut f = |x: &[f64]| {
            let a = GroupElement(x[..n].to_vec());
            let b = GroupElement(x[n..].to_vec());
            let den = metric.norm(&a) + metric.norm(&b);
            if den < 1e-12 {
                return 0.0;
            }
            -metric.norm(&GroupElement(alg.bch(&a.0, &b.0))) / den
        };
        let mut ps = PatternSearch::new(x0, &mut f, 0.1, 1e-6).with_bounds(vec![-1.0; 2 * n], vec![1.0; 2 * n]);
        ps.run(&mut f, 400);
        best = best.max(-ps.fx);
    }
    Ok(best)
}

/// Sampled band `[min, max]` of `N(g)/N'(g)` over random nonzero elements.
pub fn equivalence_band(a: &Metric, b: &Metric, samples: usize, seed: u64) -> (f64, f64) {
    let n = a.algebra().dim();
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for i in 0..samples {
        let mut rng = rng_for(seed, i as u64);
        let g = GroupElement(in_box(&mut rng, &vec![1.0; n]));
        let (x, y) = (a.norm(&g), b.norm(&g));
        if y > 1e-12 && x.is_finite() {
            lo = lo.min(x / y);
            hi = hi.max(x / y);
        }
    }
    (lo, hi)
}

/// The weight `λ = C 2^k / (1/ε + 1)^{2(k−1)!}` with `ε = 2^{(k−1)/(2(k−1)!)} − 1`.
pub fn num_bound_lambda(c: f64, k: usize) -> Result<f64> {
    if k < 2 || !(c > 0.0) {
        return Err(Error::InvalidParameter("need k ≥ 2 and C > 0".into()));
    }
    let e = 2.0 * factorial(k - 1);
    let eps = 2f64.powf((k as f64 - 1.0) / e) - 1.0;
    Ok(c * 2f64.powi(k as i32) / (1.0 / eps + 1.0).powf(e))
}

/// Relative excess of `(λ/2^k)(a+b)^e − C b^e` over `(λ/2) a^e`, with `e = 2(k−1)!`.
///
/// Both sides are homogeneous of degree `e`, so `(a, b)` is first rescaled to
/// `max(a, b) = 1`. A value `≤ 0` means the inequality holds.
pub fn num_bound_excess(lambda: f64, c: f64, k: usize, a: f64, b: f64) -> f64 {
    let e = 2.0 * factorial(k - 1);
    let m = a.max(b);
    let (a, b) = (a / m, b / m);
    let lhs = lambda / 2f64.powi(k as i32) * (a + b).powf(e) - c * b.powf(e);
    let rhs = lambda / 2.0 * a.powf(e);
    (lhs - rhs) / (lhs.abs() + rhs.abs()).max(1e-300)
}
