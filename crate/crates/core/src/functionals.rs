//! Midpoint defects, their averages over lines and cubes, Carleson sums and
//! the fitted approximations used to measure coarse differentiability.

use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::cubes::CubeHierarchy;
use crate::error::{check_dim, Error, Result};
use crate::lie::{GradedLieAlgebra, GroupElement};
use crate::maps::{MapUnderTest, Target};
use crate::norms::{euclid, Metric};
use crate::sampling::{bootstrap_mean, in_box, median, rng_for, uniform, unit_vector, SeededRng};

const BOOTSTRAP_RESAMPLES: usize = 400;

/// The horizontal segment `t ↦ x·exp(t v)`, `t ∈ [a, b]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineSegment {
    pub base: GroupElement,
    pub dir: Vec<f64>,
    pub a: f64,
    pub b: f64,
}

impl LineSegment {
    pub fn new(base: GroupElement, dir: Vec<f64>, a: f64, b: f64) -> Result<Self> {
        let n = euclid(&dir);
        if (n - 1.0).abs() > 1e-12 {
            return Err(Error::NonUnitDirection(n));
        }
        if !(b > a) {
            return Err(Error::InvalidParameter(format!("empty interval [{a}, {b}]")));
        }
        Ok(LineSegment { base, dir, a, b })
    }

    /// The interval `[a, b]` of the real line.
    pub fn interval(a: f64, b: f64) -> Result<Self> {
        Self::new(GroupElement(vec![0.0]), vec![1.0], a, b)
    }

    pub fn len(&self) -> f64 {
        self.b - self.a
    }

    pub fn point(&self, alg: &GradedLieAlgebra, t: f64) -> GroupElement {
        alg.flow(&self.base, &self.dir, t)
    }

    /// The same line restricted to `[a, b]`.
    pub fn sub(&self, a: f64, b: f64) -> Self {
        LineSegment { a, b, ..self.clone() }
    }

    /// The `2^k` dyadic subsegments of generation `k`.
    pub fn dyadic(&self, k: u32) -> Vec<Self> {
        let n = 1usize << k;
        let h = self.len() / n as f64;
        (0..n).map(|i| self.sub(self.a + i as f64 * h, self.a + (i + 1) as f64 * h)).collect()
    }
}

/// Which integrand is averaged.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Kind {
    /// The midpoint defect `∂`.
    Partial,
    /// `Θ^p` for a normed target.
    ThetaUc,
    /// `Θ^p` for a Carnot target.
    ThetaCarnot,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kind::Partial => "PARTIAL",
            Kind::ThetaUc => "THETA_UC",
            Kind::ThetaCarnot => "THETA_CARNOT",
        })
    }
}

fn check_kind(kind: Kind, target: &Target) -> Result<()> {
    let ok = match kind {
        Kind::Partial => true,
        Kind::ThetaUc => target.is_linear(),
        Kind::ThetaCarnot => !target.is_linear(),
    };
    if ok {
        Ok(())
    } else {
        Err(Error::KindTargetMismatch { kind: kind.to_string(), target: target.to_string() })
    }
}

/// A Monte Carlo estimate.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FunctionalReport {
    pub value: f64,
    pub samples: usize,
    pub seed: u64,
    pub ci_half_width: f64,
}

/// Evaluates `f` along a line.
struct LineMap<'a> {
    f: &'a MapUnderTest,
    line: &'a LineSegment,
}

impl LineMap<'_> {
    fn at(&self, t: f64) -> Vec<f64> {
        self.f.eval(&self.line.point(self.f.algebra(), t))
    }

    fn dist(&self, a: &[f64], b: &[f64]) -> f64 {
        self.f.target.dist(a, b)
    }

    fn partial(&self, x: f64, y: f64, p: f64) -> f64 {
        let (fx, fm, fy) = (self.at(x), self.at(0.5 * (x + y)), self.at(y));
        let h = (y - x).abs();
        0.5 * ((self.dist(&fx, &fm) / (0.5 * h)).powf(p) + (self.dist(&fm, &fy) / (0.5 * h)).powf(p))
            - (self.dist(&fx, &fy) / h).powf(p)
    }

    fn theta_p(&self, x: f64, y: f64, p: f64) -> f64 {
        let (fx, fm, fy) = (self.at(x), self.at(0.5 * (x + y)), self.at(y));
        let h = (y - x).abs();
        match &self.f.target {
            Target::Carnot { metric, .. } => {
                let alg = metric.algebra();
                let n = alg.horizontal_dim();
                let dev: Vec<f64> = (0..n).map(|i| 0.5 * (fx[i] + fy[i]) - fm[i]).collect();
                let rel = alg.relative(&GroupElement(fx), &GroupElement(fy)).expect("target dimension");
                (euclid(&dev).powf(p) + metric.nh(&rel).powf(p)) / h.powf(p)
            }
            t => {
                let dev: Vec<f64> = fx.iter().zip(&fy).zip(&fm).map(|((a, b), m)| 0.5 * (a + b) - m).collect();
                (t.vector_norm(&dev) / h).powf(p)
            }
        }
    }

    fn integrand(&self, kind: Kind, x: f64, y: f64, p: f64) -> f64 {
        match kind {
            Kind::Partial => self.partial(x, y, p),
            Kind::ThetaUc | Kind::ThetaCarnot => self.theta_p(x, y, p),
        }
    }
}

/// `∂_f^{(p)}(a, b)` on the segment's endpoints.
pub fn partial_p(f: &MapUnderTest, line: &LineSegment, p: f64) -> f64 {
    LineMap { f, line }.partial(line.a, line.b, p)
}

/// `∂_f^{(p)}(x, y)` for parameters `x, y` on the line.
pub fn partial_at(f: &MapUnderTest, line: &LineSegment, x: f64, y: f64, p: f64) -> f64 {
    LineMap { f, line }.partial(x, y, p)
}

/// `Θ_f(x, y)^p` for parameters `x, y` on the line.
pub fn theta_at(f: &MapUnderTest, line: &LineSegment, x: f64, y: f64, p: f64, kind: Kind) -> Result<f64> {
    if kind == Kind::Partial {
        return Err(Error::InvalidParameter("theta needs a THETA kind".into()));
    }
    check_kind(kind, &f.target)?;
    Ok(LineMap { f, line }.theta_p(x, y, p))
}

/// A uniform pair `x < y` in `[a, b]` with `y − x > ε(b − a)`.
fn sample_pair(rng: &mut SeededRng, a: f64, b: f64, eps: f64) -> (f64, f64) {
    let len = b - a;
    // L − (y − x) has density proportional to itself on (0, (1−ε)L)
    let s = (1.0 - eps) * len * uniform(rng, 0.0, 1.0).sqrt();
    let x = a + uniform(rng, 0.0, 1.0) * s;
    (x, x + len - s)
}

fn alpha_weight(eps: f64) -> f64 {
    // (1−ε)²(b−a)⁻² times the area (1−ε)²(b−a)²/2 of the region
    0.5 * (1.0 - eps).powi(4)
}

fn alpha_line_values(f: &MapUnderTest, line: &LineSegment, eps: f64, p: f64, kind: Kind, samples: usize, seed: u64) -> Vec<f64> {
    let lm = LineMap { f, line };
    let mut rng = rng_for(seed, 0);
    let w = alpha_weight(eps);
    (0..samples)
        .map(|_| {
            let (x, y) = sample_pair(&mut rng, line.a, line.b, eps);
            w * lm.integrand(kind, x, y, p)
        })
        .collect()
}

fn check_eps(eps: f64) -> Result<()> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::InvalidParameter(format!("ε must lie in [0, 1), got {eps}")));
    }
    Ok(())
}

/// Monte Carlo estimate of `α_f^{(p)}([a,b]; ε)`, or of `β` for the `THETA` kinds.
pub fn alpha_line(
    f: &MapUnderTest,
    line: &LineSegment,
    eps: f64,
    p: f64,
    kind: Kind,
    samples: usize,
    seed: u64,
) -> Result<FunctionalReport> {
    check_kind(kind, &f.target)?;
    check_eps(eps)?;
    let values = alpha_line_values(f, line, eps, p, kind, samples.max(1), seed);
    let (value, ci) = bootstrap_mean(&values, BOOTSTRAP_RESAMPLES, seed);
    Ok(FunctionalReport { value, samples: values.len(), seed, ci_half_width: ci })
}

/// Estimate of `Lip_f(s)` along a line: the largest image-to-parameter ratio
/// over pairs of an evenly spaced grid at separation at least `s`.
pub fn lip_on_line(f: &MapUnderTest, line: &LineSegment, s: f64, grid: usize) -> f64 {
    let lm = LineMap { f, line };
    let n = grid.max(2);
    let h = line.len() / (n - 1) as f64;
    let ts: Vec<f64> = (0..n).map(|i| line.a + i as f64 * h).collect();
    let vals: Vec<Vec<f64>> = ts.iter().map(|&t| lm.at(t)).collect();
    let mut best: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let d = ts[j] - ts[i];
            if d + 1e-12 * line.len() >= s {
                best = best.max(lm.dist(&vals[i], &vals[j]) / d);
            }
        }
    }
    best
}

fn check_lld(f: &MapUnderTest, scale: f64) -> Result<()> {
    if scale < f.psi {
        return Err(Error::LldScaleViolated { scale, psi: f.psi });
    }
    Ok(())
}

/// Both sides of the telescoping bound
/// `Σ_{k≤m} Σ_{I∈D^k} |I| ∂(I) ≤ 2(b−a) Lip(2^{−m−1}(b−a))^p`.
///
/// The Lipschitz constant is taken over the dyadic grid of generation `m+1`
/// refined four times, which contains every pair the left side uses.
pub fn telescope_check(f: &MapUnderTest, line: &LineSegment, p: f64, m: u32) -> Result<(f64, f64)> {
    let s = line.len() / 2f64.powi(m as i32 + 1);
    check_lld(f, s)?;
    let lm = LineMap { f, line };
    let mut lhs = 0.0;
    for k in 0..=m {
        for i in line.dyadic(k) {
            lhs += i.len() * lm.partial(i.a, i.b, p);
        }
    }
    let lip = lip_on_line(f, line, s, (1usize << (m + 3)) + 1);
    Ok((lhs, 2.0 * line.len() * lip.powf(p)))
}

/// Both sides of the one-dimensional Carleson bound
/// `Σ_{k≤m} Σ_{I∈D^k} α(I; ε)|I| ≤ 4(b−a) Lip(ε 2^{−m−1}(b−a))^p`.
pub fn carleson_1d(
    f: &MapUnderTest,
    line: &LineSegment,
    eps: f64,
    p: f64,
    m: u32,
    samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    check_eps(eps)?;
    let s = eps * line.len() / 2f64.powi(m as i32 + 1);
    check_lld(f, s)?;
    let mut lhs = 0.0;
    let mut stream = 0u64;
    for k in 0..=m {
        for i in line.dyadic(k) {
            let vals = alpha_line_values(f, &i, eps, p, Kind::Partial, samples, seed ^ stream.wrapping_mul(0x9e37_79b9));
            stream += 1;
            lhs += i.len() * vals.iter().sum::<f64>() / vals.len() as f64;
        }
    }
    let grid = ((line.len() / s).ceil() as usize * 2 + 1).clamp(65, 2049);
    let lip = lip_on_line(f, line, s, grid);
    Ok((lhs, 4.0 * line.len() * lip.powf(p)))
}

/// Both sides of the energy bound
/// `Σ_{k<m} 2^{−k} max_{I∈D^k} Θ(I)^p ≥ (4K)^{−p} max_j |h(t_j) − L(t_j)|^p / (b−a)^p`
/// with `t_j` the dyadic points of generation `m` and `L` the linear interpolation.
pub fn uc_energy_sides(f: &MapUnderTest, line: &LineSegment, m: u32) -> Result<(f64, f64)> {
    check_kind(Kind::ThetaUc, &f.target)?;
    let (p, k) = f.target.convexity();
    let lm = LineMap { f, line };
    let mut lhs = 0.0;
    for g in 0..m {
        let worst = line.dyadic(g).iter().map(|i| lm.theta_p(i.a, i.b, p)).fold(0.0, f64::max);
        lhs += worst / 2f64.powi(g as i32);
    }
    let (ha, hb) = (lm.at(line.a), lm.at(line.b));
    let n = 1usize << m;
    let mut dev: f64 = 0.0;
    for j in 0..=n {
        let s = j as f64 / n as f64;
        let t = line.a + s * line.len();
        let interp = linear_interpolation(&ha, &hb, s);
        let d: Vec<f64> = lm.at(t).iter().zip(&interp).map(|(x, y)| x - y).collect();
        dev = dev.max(f.target.vector_norm(&d));
    }
    let rhs = (dev / line.len()).powf(p) / (4.0 * k).powf(p);
    Ok((lhs, rhs))
}

/// `(1 − s) y_a + s y_b`.
pub fn linear_interpolation(ya: &[f64], yb: &[f64], s: f64) -> Vec<f64> {
    ya.iter().zip(yb).map(|(a, b)| (1.0 - s) * a + s * b).collect()
}

/// The horizontal line from `h_u` in the direction of `π̃(h_u⁻¹ h_v)`, at parameter `s ∈ [0, 1]`.
///
/// At `s = 1` it misses `h_v` by exactly `NH(h_u⁻¹ h_v)`.
pub fn one_sided_interpolant(alg: &GradedLieAlgebra, hu: &GroupElement, hv: &GroupElement, s: f64) -> Result<GroupElement> {
    let rel = alg.relative(hu, hv)?;
    let v = alg.horizontal_project(&rel);
    Ok(alg.flow(hu, &v, s))
}

/// Pairwise check of the convexity link `Θ^p ≤ c·∂` on shared samples,
/// with `c = K^p/2^p` for normed targets and `c = K/2^p` for Carnot targets.
#[derive(Clone, Debug, Serialize)]
pub struct LinkReport {
    pub pairs: usize,
    pub factor: f64,
    /// Pairs with `Θ^p − c·∂` above the slack.
    pub violations: usize,
    /// Largest `Θ^p − c·∂` relative to `max(Θ^p, c·∂, 1)`.
    pub worst_excess: f64,
}

pub fn convexity_link(f: &MapUnderTest, line: &LineSegment, pairs: usize, slack: f64, seed: u64) -> Result<LinkReport> {
    let kind = if f.target.is_linear() { Kind::ThetaUc } else { Kind::ThetaCarnot };
    let (p, k) = f.target.convexity();
    let factor = match kind {
        Kind::ThetaUc => k.powf(p) / 2f64.powf(p),
        _ => k / 2f64.powf(p),
    };
    let lm = LineMap { f, line };
    let mut rng = rng_for(seed, 1);
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..pairs {
        let (x, y) = sample_pair(&mut rng, line.a, line.b, 0.0);
        let theta = lm.theta_p(x, y, p);
        let bound = factor * lm.partial(x, y, p);
        let excess = (theta - bound) / theta.abs().max(bound.abs()).max(1.0);
        worst = worst.max(excess);
        if excess > slack {
            violations += 1;
        }
    }
    Ok(LinkReport { pairs, factor, violations, worst_excess: worst })
}

/// Sample sizes for cube averages.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubeSampling {
    pub directions: usize,
    pub lines: usize,
    pub pairs: usize,
}

impl Default for CubeSampling {
    fn default() -> Self {
        CubeSampling { directions: 64, lines: 32, pairs: 2000 }
    }
}

/// A cube average together with how many sampled lines met `2B_Q`.
#[derive(Clone, Debug, Serialize)]
pub struct CubeAlpha {
    pub report: FunctionalReport,
    pub lines_hit: usize,
    pub lines_sampled: usize,
}

impl CubeAlpha {
    /// No sampled line met `2B_Q`; the value is 0 by convention.
    pub fn no_lines(&self) -> bool {
        self.lines_hit == 0
    }
}

/// Orthonormal basis of the complement of `v` in `ℝⁿ`.
fn complement_basis(v: &[f64]) -> Vec<Vec<f64>> {
    let n = v.len();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n - 1);
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        for b in std::iter::once(v).chain(basis.iter().map(|b| b.as_slice())) {
            let d: f64 = e.iter().zip(b).map(|(x, y)| x * y).sum();
            e.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let norm = euclid(&e);
        if norm > 1e-8 && basis.len() < n - 1 {
            basis.push(e.iter().map(|x| x / norm).collect());
        }
    }
    basis
}

/// Parameter interval of the component of `{t : d(z, x·e^{tv}) ≤ outer}` containing `t0`.
fn clip(metric: &Metric, z: &GroupElement, line: &LineSegment, t0: f64, outer: f64, step: f64) -> (f64, f64) {
    let alg = metric.algebra();
    let inside = |t: f64| metric.dist(z, &line.point(alg, t)) <= outer;
    let edge = |dir: f64| {
        let mut lo = t0;
        let mut hi = t0 + dir * step;
        let mut guard = 0;
        while inside(hi) && guard < 10_000 {
            lo = hi;
            hi += dir * step;
            guard += 1;
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if inside(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    (edge(-1.0), edge(1.0))
}

/// Monte Carlo estimate of the cube average `α_f^{(p)}(Q; ε)`.
///
/// Directions are uniform on the sphere of the horizontal layer. Base points
/// are uniform on the transversal slice `z_Q (G ⊖ v)` inside the ball of
/// radius `R = 4 r(B_Q)`, which contains every base point whose line meets
/// `2B_Q`; the slice ball is given measure `R^{N−1}`. Each line that meets
/// `2B_Q` contributes its `α` on the component of the line inside `6B_Q`.
/// Calls with equal seeds reuse the same lines and pairs for every kind.
#[allow(clippy::too_many_arguments)]
pub fn alpha_cube(
    f: &MapUnderTest,
    hier: &CubeHierarchy,
    level: usize,
    id: usize,
    eps: f64,
    p: f64,
    kind: Kind,
    sampling: CubeSampling,
    seed: u64,
) -> Result<CubeAlpha> {
    check_kind(kind, &f.target)?;
    check_eps(eps)?;
    let metric = &hier.cloud.metric;
    let alg = metric.algebra();
    check_dim(f.algebra().dim(), alg.dim())?;
    let cube = hier
        .cube(level, id)
        .ok_or_else(|| Error::InvalidParameter(format!("no cube {id} at level {level}")))?;
    let z = hier.center(cube).clone();
    let r = hier.ball_radius(cube);
    let ell = hier.scale(level);
    let big_r = 4.0 * r;
    let n = alg.horizontal_dim();
    let nn = alg.homogeneous_dim() as f64;
    let bounds = metric.coordinate_box(big_r)?;
    let weight = (big_r / ell).powf(nn - 1.0);

    let mut values = Vec::with_capacity(sampling.directions * sampling.lines);
    let mut hit = 0;
    for di in 0..sampling.directions {
        let mut rng = rng_for(seed, di as u64);
        let v = unit_vector(&mut rng, n);
        let perp = complement_basis(&v);
        for li in 0..sampling.lines {
            let mut lrng = rng_for(seed ^ 0x5bd1_e995, (di * sampling.lines + li) as u64);
            let w = loop {
                let mut c = in_box(&mut lrng, &bounds);
                let coeffs: Vec<f64> = (0..n - 1).map(|_| uniform(&mut lrng, -big_r, big_r)).collect();
                c[..n].iter_mut().for_each(|x| *x = 0.0);
                for (b, a) in perp.iter().zip(&coeffs) {
                    c[..n].iter_mut().zip(b).for_each(|(x, y)| *x += a * y);
                }
                let g = GroupElement(c);
                if metric.norm(&g) <= big_r {
                    break g;
                }
            };
            let base = GroupElement(alg.bch(&z.0, &w.0));
            let line = LineSegment { base, dir: v.clone(), a: -1.0, b: 1.0 };
            // closest approach to z over a grid covering |t| ≤ 6r
            let grid = 96;
            let (mut t0, mut best) = (0.0, f64::INFINITY);
            for j in 0..=grid {
                let t = -6.0 * r + 12.0 * r * j as f64 / grid as f64;
                let d = metric.dist(&z, &line.point(alg, t));
                if d < best {
                    best = d;
                    t0 = t;
                }
            }
            if best > 2.0 * r {
                values.push(0.0);
                continue;
            }
            hit += 1;
            let (a, b) = clip(metric, &z, &line, t0, 6.0 * r, r / 4.0);
            let seg = line.sub(a, b);
            let vals = alpha_line_values(f, &seg, eps, p, kind, sampling.pairs.max(1), seed.wrapping_add(values.len() as u64 + 1));
            values.push(weight * vals.iter().sum::<f64>() / vals.len() as f64);
        }
    }
    let (value, ci) = bootstrap_mean(&values, BOOTSTRAP_RESAMPLES, seed);
    Ok(CubeAlpha {
        report: FunctionalReport { value, samples: values.len(), seed, ci_half_width: ci },
        lines_hit: hit,
        lines_sampled: values.len(),
    })
}

/// One level of a Carleson sum.
#[derive(Clone, Debug, Serialize)]
pub struct CarlesonLevel {
    pub level: usize,
    pub cubes: usize,
    /// `Σ_Q α(Q)|Q|` over the level.
    pub sum: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CarlesonTable {
    pub levels: Vec<CarlesonLevel>,
    pub total: f64,
    /// `total / (|S| Lip^p)`.
    pub normalized: f64,
}

/// `Σ_{k≤m} Σ_{Q∈Δ_k(S)} α(Q)|Q|` below the cube `S = root`, with `|Q|` the
/// empirical cube measure and `Lip` the map's `lip_psi`.
#[allow(clippy::too_many_arguments)]
pub fn carleson_sum(
    f: &MapUnderTest,
    hier: &CubeHierarchy,
    root: (usize, usize),
    depth: usize,
    eps: f64,
    p: f64,
    kind: Kind,
    sampling: CubeSampling,
    seed: u64,
) -> Result<CarlesonTable> {
    let s = hier
        .cube(root.0, root.1)
        .ok_or_else(|| Error::InvalidParameter(format!("no cube {} at level {}", root.1, root.0)))?;
    let s_measure = hier.measure(s);
    let last = (root.0 + depth).min(hier.depth);
    let mut levels = Vec::new();
    let mut total = 0.0;
    for level in root.0..=last {
        let ids = hier.descendants(root, level);
        let mut sum = 0.0;
        for &id in &ids {
            let cube = &hier.levels[level][id];
            let cube_seed = seed ^ ((level as u64) << 40) ^ (id as u64).wrapping_mul(0x2545_f491);
            let a = alpha_cube(f, hier, level, id, eps, p, kind, sampling, cube_seed)?;
            sum += a.report.value * hier.measure(cube);
        }
        total += sum;
        levels.push(CarlesonLevel { level, cubes: ids.len(), sum });
    }
    let normalized = total / (s_measure * f.lip_psi.powf(p));
    Ok(CarlesonTable { levels, total, normalized })
}

/// Uniform sample of the ball `B(z, r)` of the hierarchy's metric.
fn sample_near(metric: &Metric, z: &GroupElement, r: f64, count: usize, rng: &mut SeededRng) -> Result<Vec<GroupElement>> {
    let bounds = metric.coordinate_box(r)?;
    let alg = metric.algebra();
    let mut out = Vec::with_capacity(count);
    let mut tries = 0usize;
    while out.len() < count {
        tries += 1;
        if tries > 10_000 && (out.len() as f64) < 1e-4 * tries as f64 {
            return Err(Error::AcceptanceTooLow { rate: out.len() as f64 / tries as f64, floor: 1e-4 });
        }
        let w = GroupElement(in_box(rng, &bounds));
        if metric.norm(&w) <= r {
            out.push(GroupElement(alg.bch(&z.0, &w.0)));
        }
    }
    Ok(out)
}

fn cube_ball(hier: &CubeHierarchy, level: usize, id: usize, shrink: f64) -> Result<(GroupElement, f64)> {
    if !(shrink > 0.0 && shrink <= 1.0) {
        return Err(Error::InvalidParameter(format!("shrink must lie in (0, 1], got {shrink}")));
    }
    let cube = hier
        .cube(level, id)
        .ok_or_else(|| Error::InvalidParameter(format!("no cube {id} at level {level}")))?;
    Ok((hier.center(cube).clone(), shrink * hier.ball_radius(cube)))
}

/// Least-squares affine approximation `f ≈ A π + v` on a shrunken cube ball.
#[derive(Clone, Debug, Serialize)]
pub struct AffineFit {
    /// Rows are target coordinates.
    pub a: Vec<Vec<f64>>,
    pub offset: Vec<f64>,
    /// Sup error on a fresh sample.
    pub sup_err: f64,
    /// `sup_err` divided by the radius of the ball.
    pub normalized: f64,
    /// The design matrix was rank deficient and the solve was regularized.
    pub regularized: bool,
}

impl AffineFit {
    /// Operator norm of the linear part.
    pub fn slope(&self) -> f64 {
        let m = DMatrix::from_fn(self.a.len(), self.a.first().map_or(0, Vec::len), |i, j| self.a[i][j]);
        m.singular_values().max()
    }
}

pub fn fit_affine(
    f: &MapUnderTest,
    hier: &CubeHierarchy,
    level: usize,
    id: usize,
    shrink: f64,
    samples: usize,
    seed: u64,
) -> Result<AffineFit> {
    if !f.target.is_linear() {
        return Err(Error::KindTargetMismatch { kind: "affine fit".into(), target: f.target.to_string() });
    }
    let (z, r) = cube_ball(hier, level, id, shrink)?;
    let metric = &hier.cloud.metric;
    let n = metric.algebra().horizontal_dim();
    let samples = samples.max(2 * (n + 1));
    let mut rng = rng_for(seed, 0);
    let fit_pts = sample_near(metric, &z, r, samples, &mut rng)?;
    // centered and scaled coordinates keep the normal equations well conditioned
    let design = DMatrix::from_fn(samples, n + 1, |i, j| if j < n { (fit_pts[i].0[j] - z.0[j]) / r } else { 1.0 });
    let values: Vec<Vec<f64>> = fit_pts.iter().map(|g| f.eval(g)).collect();
    let d = values[0].len();
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let regularized = svd.singular_values.min() <= 1e-10 * smax;
    let mut a = vec![vec![0.0; n]; d];
    let mut offset = vec![0.0; d];
    for c in 0..d {
        let rhs = DVector::from_fn(samples, |i, _| values[i][c]);
        let sol = svd.solve(&rhs, 1e-10 * smax).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        for j in 0..n {
            a[c][j] = sol[j] / r;
        }
        offset[c] = sol[n] - (0..n).map(|j| a[c][j] * z.0[j]).sum::<f64>();
    }
    let test_pts = sample_near(metric, &z, r, samples, &mut rng_for(seed, 1))?;
    let mut sup_err: f64 = 0.0;
    for g in &test_pts {
        let y = f.eval(g);
        let pred: Vec<f64> = (0..d).map(|c| offset[c] + (0..n).map(|j| a[c][j] * g.0[j]).sum::<f64>()).collect();
        let diff: Vec<f64> = y.iter().zip(&pred).map(|(u, v)| u - v).collect();
        sup_err = sup_err.max(f.target.vector_norm(&diff));
    }
    Ok(AffineFit { a, offset, sup_err, normalized: sup_err / r, regularized })
}

/// Per-direction speeds fitted by medians of chord ratios.
#[derive(Clone, Debug, Serialize)]
pub struct SpeedFit {
    pub speeds: Vec<f64>,
    /// Largest `|d(f(x e^{sv}), f(x e^{tv})) − (t−s) w(v)|` divided by the ball radius.
    pub sup_err: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn fit_geodesic_speeds(
    f: &MapUnderTest,
    hier: &CubeHierarchy,
    level: usize,
    id: usize,
    directions: &[Vec<f64>],
    shrink: f64,
    samples: usize,
    seed: u64,
) -> Result<SpeedFit> {
    let (z, r) = cube_ball(hier, level, id, shrink)?;
    let metric = &hier.cloud.metric;
    let alg = metric.algebra();
    let samples = samples.max(1);
    let mut speeds = Vec::with_capacity(directions.len());
    let mut sup_err: f64 = 0.0;
    for (k, v) in directions.iter().enumerate() {
        check_dim(alg.horizontal_dim(), v.len())?;
        let nv = euclid(v);
        if (nv - 1.0).abs() > 1e-12 {
            return Err(Error::NonUnitDirection(nv));
        }
        let mut rng = rng_for(seed, k as u64);
        let xs = sample_near(metric, &z, r, samples, &mut rng)?;
        let mut obs = Vec::with_capacity(samples);
        for x in &xs {
            let s = uniform(&mut rng, -r, r);
            let t = uniform(&mut rng, -r, r);
            let (s, t) = if s < t { (s, t) } else { (t, s) };
            if t - s <= 1e-12 * r {
                continue;
            }
            let d = f.target.dist(&f.eval(&alg.flow(x, v, s)), &f.eval(&alg.flow(x, v, t)));
            obs.push((d, t - s));
        }
        let ratios: Vec<f64> = obs.iter().map(|(d, h)| d / h).collect();
        let w = if ratios.is_empty() { 0.0 } else { median(&ratios) };
        for (d, h) in &obs {
            sup_err = sup_err.max((d - h * w).abs() / r);
        }
        speeds.push(w);
    }
    Ok(SpeedFit { speeds, sup_err })
}

/// Outcome of [`homomorphism_relation_defect`].
#[derive(Clone, Debug, Serialize)]
pub struct RelationDefect {
    /// Largest absolute value of a relation polynomial at the assignment.
    pub defect: f64,
    pub relations: usize,
    /// Rank of the assigned horizontal vectors.
    pub rank: usize,
    /// The assignment is rank deficient, so any extension is degenerate.
    pub degenerate: bool,
}

fn bracket_words(alg: &GradedLieAlgebra, gens: &[Vec<f64>], max_len: usize) -> Result<Vec<Vec<f64>>> {
    let mut level: Vec<Vec<f64>> = gens.to_vec();
    let mut all = level.clone();
    for _ in 1..max_len {
        let mut next = Vec::with_capacity(level.len() * gens.len());
        for g in gens {
            for w in &level {
                next.push(alg.bracket(g, w)?);
            }
        }
        all.extend(next.iter().cloned());
        level = next;
    }
    Ok(all)
}

/// Checks whether sending the horizontal basis of `src` to `w` extends to a
/// Lie algebra homomorphism into `dst`.
///
/// The relations are the linear dependences among right-nested brackets of
/// the source basis up to one more than the source step; each is evaluated on
/// the images and the largest residual returned.
pub fn homomorphism_relation_defect(w: &[Vec<f64>], src: &GradedLieAlgebra, dst: &GradedLieAlgebra) -> Result<RelationDefect> {
    let n = src.horizontal_dim();
    check_dim(n, w.len())?;
    let mut images = Vec::with_capacity(n);
    for v in w {
        check_dim(dst.horizontal_dim(), v.len())?;
        let mut full = vec![0.0; dst.dim()];
        full[..v.len()].copy_from_slice(v);
        images.push(full);
    }
    let basis: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut e = vec![0.0; src.dim()];
            e[i] = 1.0;
            e
        })
        .collect();
    let max_len = src.step() + 1;
    let src_words = bracket_words(src, &basis, max_len)?;
    let dst_words = bracket_words(dst, &images, max_len)?;
    let m = src_words.len();
    let a = DMatrix::from_fn(src.dim(), m, |i, j| src_words[j][i]);
    let b = DMatrix::from_fn(dst.dim(), m, |i, j| dst_words[j][i]);
    let eig = SymmetricEigen::new(a.transpose() * &a);
    let scale = eig.eigenvalues.amax().max(1.0);
    let mut defect: f64 = 0.0;
    let mut relations = 0;
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam.abs() <= 1e-10 * scale {
            relations += 1;
            let c = eig.eigenvectors.column(k);
            defect = defect.max((&b * c).amax());
        }
    }
    let wm = DMatrix::from_fn(dst.horizontal_dim(), n, |i, j| w[j][i]);
    let rank = wm.rank(1e-10);
    Ok(RelationDefect { defect, relations, rank, degenerate: rank < n })
}

/// Whether `(α²+β²)/2 − γ² ≤ ε²` implies `max(|α−γ|, |β−γ|) ≤ 2ε`.
pub fn m_numerical_check(alpha: f64, beta: f64, gamma: f64, eps: f64) -> Result<bool> {
    if [alpha, beta, gamma, eps].iter().any(|x| !(*x >= 0.0)) {
        return Err(Error::Precondition("all arguments must be nonnegative".into()));
    }
    if gamma > 0.5 * (alpha + beta) * (1.0 + 1e-15) {
        return Err(Error::Precondition(format!("γ = {gamma} exceeds (α+β)/2")));
    }
    let premise = 0.5 * (alpha * alpha + beta * beta) - gamma * gamma <= eps * eps;
    let slack = 1e-12 * (1.0 + alpha.max(beta));
    Ok(!premise || (alpha - gamma).abs().max((beta - gamma).abs()) <= 2.0 * eps + slack)
}

/// Exhaustive grid over `[0, 2]³` with `side` points per axis. For each
/// admissible triple the tightest `ε` and `extra_eps` further values are tried.
/// Returns (cases checked, counterexamples).
pub fn m_numerical_grid(side: usize, extra_eps: &[f64]) -> (usize, usize) {
    let h = 2.0 / (side - 1) as f64;
    let (mut checked, mut bad) = (0, 0);
    for i in 0..side {
        let a = i as f64 * h;
        for j in 0..side {
            let b = j as f64 * h;
            for k in 0..side {
                let g = k as f64 * h;
                if g > 0.5 * (a + b) {
                    continue;
                }
                let tight = (0.5 * (a * a + b * b) - g * g).max(0.0).sqrt();
                for &e in std::iter::once(&tight).chain(extra_eps) {
                    checked += 1;
                    if !m_numerical_check(a, b, g, e).unwrap_or(true) {
                        bad += 1;
                    }
                }
            }
        }
    }
    (checked, bad)
}
