//! Target spaces and the registry of maps fed to the functionals.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::lie::{GradedLieAlgebra, GroupElement};
use crate::norms::{convexity_exponent, euclid, ConvexNormParams, Metric};
use crate::sampling::{in_box, rng_for};

/// Where a map takes its values.
#[derive(Clone, Debug)]
pub enum Target {
    RealLine,
    Euclidean(usize),
    /// `ℓ_q^d`, carrying the exponent `p` and constant `K` of its uniform convexity.
    Lp { dim: usize, q: f64, p: f64, k: f64 },
    /// A Carnot group with a convex norm witnessing midpoint convexity with constant `c`.
    Carnot { metric: Metric, c: f64 },
}

impl Target {
    /// `ℓ_q^d` with its uniform convexity data: exponent `q` and `K = 1` when
    /// `q ≥ 2`, exponent 2 and `K = 1/√(q−1)` when `1 < q < 2`.
    pub fn lp(dim: usize, q: f64) -> Result<Self> {
        if !(q > 1.0) {
            return Err(Error::InvalidParameter(format!("ℓ_q needs q > 1, got {q}")));
        }
        let (p, k) = if q >= 2.0 { (q, 1.0) } else { (2.0, 1.0 / (q - 1.0).sqrt()) };
        Ok(Target::Lp { dim, q, p, k })
    }

    pub fn carnot(alg: GradedLieAlgebra, params: ConvexNormParams, c: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(Error::InvalidParameter("convexity constant must be positive".into()));
        }
        Ok(Target::Carnot { metric: Metric::convex(alg, params)?, c })
    }

    pub fn dim(&self) -> usize {
        match self {
            Target::RealLine => 1,
            Target::Euclidean(d) => *d,
            Target::Lp { dim, .. } => *dim,
            Target::Carnot { metric, .. } => metric.algebra().dim(),
        }
    }

    /// True for normed vector spaces, where midpoints and affine fits make sense.
    pub fn is_linear(&self) -> bool {
        !matches!(self, Target::Carnot { .. })
    }

    /// Norm of a vector in a linear target.
    pub fn vector_norm(&self, v: &[f64]) -> f64 {
        match self {
            Target::RealLine => v[0].abs(),
            Target::Euclidean(_) => euclid(v),
            Target::Lp { q, .. } => v.iter().map(|x| x.abs().powf(*q)).sum::<f64>().powf(1.0 / q),
            Target::Carnot { metric, .. } => metric.norm(&GroupElement(v.to_vec())),
        }
    }

    pub fn dist(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Target::Carnot { metric, .. } => {
                metric.dist(&GroupElement(a.to_vec()), &GroupElement(b.to_vec()))
            }
            _ => {
                let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
                self.vector_norm(&d)
            }
        }
    }

    /// Exponent `p` and constant `K` of the midpoint convexity inequality.
    ///
    /// For Carnot targets `K = 2^p / C`, which makes `Θ^p ≤ (K/2^p) ∂` follow
    /// from the convexity defect bound with constant `C`.
    pub fn convexity(&self) -> (f64, f64) {
        match self {
            Target::RealLine | Target::Euclidean(_) => (2.0, 1.0),
            Target::Lp { p, k, .. } => (*p, *k),
            Target::Carnot { metric, c } => {
                let p = convexity_exponent(metric.algebra());
                (p, 2f64.powf(p) / c)
            }
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::RealLine => write!(f, "REAL_LINE"),
            Target::Euclidean(d) => write!(f, "EUCLIDEAN({d})"),
            Target::Lp { dim, q, .. } => write!(f, "LP({dim}, {q})"),
            Target::Carnot { metric, .. } => write!(f, "CARNOT({})", metric.algebra().name()),
        }
    }
}

pub type EvalFn = Arc<dyn Fn(&GroupElement) -> Vec<f64> + Send + Sync>;

/// A map from a ball of a Carnot group into a target space.
#[derive(Clone)]
pub struct MapUnderTest {
    pub name: String,
    pub domain: Metric,
    pub radius: f64,
    pub target: Target,
    eval: EvalFn,
    /// Scale below which the map need not be Lipschitz.
    pub psi: f64,
    /// Lipschitz constant at scales above `psi`.
    pub lip_psi: f64,
}

impl fmt::Debug for MapUnderTest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MapUnderTest")
            .field("name", &self.name)
            .field("target", &self.target)
            .field("psi", &self.psi)
            .field("lip_psi", &self.lip_psi)
            .finish()
    }
}

impl MapUnderTest {
    pub fn new(
        name: impl Into<String>,
        domain: Metric,
        radius: f64,
        target: Target,
        psi: f64,
        lip_psi: f64,
        eval: EvalFn,
    ) -> Self {
        MapUnderTest { name: name.into(), domain, radius, target, eval, psi, lip_psi }
    }

    pub fn eval(&self, g: &GroupElement) -> Vec<f64> {
        (self.eval)(g)
    }

    pub fn algebra(&self) -> &GradedLieAlgebra {
        self.domain.algebra()
    }

    /// Target distance between the images of two points.
    pub fn image_dist(&self, g: &GroupElement, h: &GroupElement) -> f64 {
        self.target.dist(&self.eval(g), &self.eval(h))
    }

    /// Post-composes with a translation of a linear target.
    pub fn translated(&self, shift: Vec<f64>) -> Self {
        let inner = self.eval.clone();
        let mut out = self.clone();
        out.eval = Arc::new(move |g| inner(g).iter().zip(&shift).map(|(a, b)| a + b).collect());
        out
    }

    /// Precomposes with left translation by `k`.
    pub fn left_translated(&self, k: GroupElement) -> Self {
        let inner = self.eval.clone();
        let alg = self.algebra().clone();
        let mut out = self.clone();
        out.eval = Arc::new(move |g| inner(&GroupElement(alg.bch(&k.0, &g.0))));
        out
    }

    /// Sampled check of the large-scale Lipschitz condition: the largest
    /// ratio of image distance to the allowed bound over random pairs of the ball.
    pub fn lld_excess(&self, pairs: usize, seed: u64) -> Result<f64> {
        let bounds = self.domain.coordinate_box(self.radius)?;
        let mut worst: f64 = 0.0;
        for i in 0..pairs {
            let mut rng = rng_for(seed, i as u64);
            let x = sample_in_ball(&self.domain, &bounds, self.radius, &mut rng);
            let y = sample_in_ball(&self.domain, &bounds, self.radius, &mut rng);
            let d = self.domain.dist(&x, &y);
            let allowed = self.lip_psi * d.max(self.psi);
            if allowed > 0.0 {
                worst = worst.max(self.image_dist(&x, &y) / allowed);
            }
        }
        Ok(worst)
    }
}

pub(crate) fn sample_in_ball(metric: &Metric, bounds: &[f64], radius: f64, rng: &mut impl rand::Rng) -> GroupElement {
    loop {
        let g = GroupElement(in_box(rng, bounds));
        if metric.norm(&g) <= radius {
            return g;
        }
    }
}

/// Sawtooth with unit-slope teeth of width `w`: slope −1 on `[0, w)`, +1 on `[w, 2w)`, period `2w`.
pub fn sawtooth(x: f64, w: f64) -> f64 {
    let r = x.rem_euclid(2.0 * w);
    if r < w {
        -r
    } else {
        r - 2.0 * w
    }
}

/// The identity of an abelian group onto Euclidean space.
pub fn identity(domain: Metric, radius: f64) -> Result<MapUnderTest> {
    let alg = domain.algebra();
    if alg.step() != 1 {
        return Err(Error::InvalidParameter("identity map needs an abelian domain".into()));
    }
    let d = alg.dim();
    let target = if d == 1 { Target::RealLine } else { Target::Euclidean(d) };
    Ok(MapUnderTest::new("identity", domain, radius, target, 0.0, 1.0, Arc::new(|g: &GroupElement| g.0.clone())))
}

/// The horizontal projection `π: G → ℝⁿ`, a 1-Lipschitz homomorphism.
pub fn projection(domain: Metric, radius: f64) -> MapUnderTest {
    let n = domain.algebra().horizontal_dim();
    let target = if n == 1 { Target::RealLine } else { Target::Euclidean(n) };
    MapUnderTest::new("pi", domain, radius, target, 0.0, 1.0, Arc::new(move |g: &GroupElement| g.0[..n].to_vec()))
}

/// Exponential coordinates read as a point of Euclidean space.
pub fn euclidean_identity(domain: Metric, radius: f64) -> Result<MapUnderTest> {
    let d = domain.algebra().dim();
    let mut m = MapUnderTest::new(
        "euclidean_identity",
        domain,
        radius,
        Target::Euclidean(d),
        0.0,
        1.0,
        Arc::new(|g: &GroupElement| g.0.clone()),
    );
    m.lip_psi = 1.0_f64.max(m.lld_excess(4000, 0)? * 1.05);
    Ok(m)
}

/// `sawtooth(⟨π(g), e_1⟩)` with teeth of width `w`.
pub fn sawtooth_pi(domain: Metric, radius: f64, w: f64) -> MapUnderTest {
    MapUnderTest::new(
        "sawtooth_pi",
        domain,
        radius,
        Target::RealLine,
        0.0,
        1.0,
        Arc::new(move |g: &GroupElement| vec![sawtooth(g.0[0], w)]),
    )
}

/// `exp(−|π(g)|²)`, a smooth nonaffine map with Lipschitz constant `√2 e^{−1/2} < 1`.
pub fn bump(domain: Metric, radius: f64) -> MapUnderTest {
    let n = domain.algebra().horizontal_dim();
    MapUnderTest::new(
        "bump",
        domain,
        radius,
        Target::RealLine,
        0.0,
        1.0,
        Arc::new(move |g: &GroupElement| vec![(-g.0[..n].iter().map(|x| x * x).sum::<f64>()).exp()]),
    )
}

/// `g ↦ A π(g) + v` into a linear target.
pub fn affine(domain: Metric, radius: f64, a: Vec<Vec<f64>>, v: Vec<f64>) -> MapUnderTest {
    let d = v.len();
    let lip = a.iter().map(|row| row.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt().max(1e-300);
    let n = domain.algebra().horizontal_dim();
    let target = if d == 1 { Target::RealLine } else { Target::Euclidean(d) };
    MapUnderTest::new(
        "affine",
        domain,
        radius,
        target,
        0.0,
        lip,
        Arc::new(move |g: &GroupElement| {
            a.iter()
                .zip(&v)
                .map(|(row, vi)| vi + row.iter().zip(&g.0[..n]).map(|(x, y)| x * y).sum::<f64>())
                .collect()
        }),
    )
}

/// A constant map.
pub fn constant(domain: Metric, radius: f64, value: Vec<f64>) -> MapUnderTest {
    let target = if value.len() == 1 { Target::RealLine } else { Target::Euclidean(value.len()) };
    MapUnderTest::new("constant", domain, radius, target, 0.0, 1.0, Arc::new(move |_: &GroupElement| value.clone()))
}

/// Piecewise-linear map `ℝ → Y` through the knots `(t_i, y_i)`, constant outside.
pub fn piecewise_linear(knots: Vec<f64>, values: Vec<Vec<f64>>, target: Target) -> Result<MapUnderTest> {
    if knots.len() < 2 || knots.len() != values.len() || knots.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("knots must be increasing and match the values".into()));
    }
    let lip = knots
        .windows(2)
        .zip(values.windows(2))
        .map(|(t, y)| target.dist(&y[0], &y[1]) / (t[1] - t[0]))
        .fold(0.0, f64::max);
    let domain = Metric::n_infty(GradedLieAlgebra::abelian(1)?);
    let radius = knots.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    let (k2, v2) = (knots.clone(), values.clone());
    Ok(MapUnderTest::new(
        "piecewise_linear",
        domain,
        radius,
        target,
        0.0,
        lip.max(1e-300),
        Arc::new(move |g: &GroupElement| {
            let t = g.0[0];
            let last = k2.len() - 1;
            if t <= k2[0] {
                return v2[0].clone();
            }
            if t >= k2[last] {
                return v2[last].clone();
            }
            let i = k2.partition_point(|&k| k <= t) - 1;
            let s = (t - k2[i]) / (k2[i + 1] - k2[i]);
            v2[i].iter().zip(&v2[i + 1]).map(|(a, b)| a + s * (b - a)).collect()
        }),
    ))
}

/// A map `ℝ → Y` given by a closure.
pub fn line_map(
    name: &str,
    target: Target,
    radius: f64,
    lip: f64,
    f: impl Fn(f64) -> Vec<f64> + Send + Sync + 'static,
) -> Result<MapUnderTest> {
    let domain = Metric::n_infty(GradedLieAlgebra::abelian(1)?);
    Ok(MapUnderTest::new(name, domain, radius, target, 0.0, lip, Arc::new(move |g: &GroupElement| f(g.0[0]))))
}

/// Looks up a registry map by name on the given domain.
pub fn registry(name: &str, domain: Metric, radius: f64) -> Result<MapUnderTest> {
    match name {
        "identity" => identity(domain, radius),
        "pi" => Ok(projection(domain, radius)),
        "euclidean_identity" => euclidean_identity(domain, radius),
        "sawtooth_pi" => Ok(sawtooth_pi(domain, radius, radius / 16.0)),
        "bump" => Ok(bump(domain, radius)),
        _ => Err(Error::UnknownMap(name.to_string())),
    }
}
