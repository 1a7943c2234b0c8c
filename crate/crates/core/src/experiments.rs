//! Nets, Voronoi extensions, distortion, collapse scans, discrete ball growth
//! and the configuration and CSV surface of the experiment runner.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::cc::{cc_lower, cc_upper, CcOptions};
use crate::cubes::{build_hierarchy, sample_ball, verify_hierarchy, PointCloud};
use crate::error::{Error, Result};
use crate::functionals::{alpha_cube, carleson_sum, fit_affine, fit_geodesic_speeds, CubeSampling, Kind};
use crate::lie::{AlgebraSpec, GradedLieAlgebra, GroupElement};
use crate::maps::{registry, sample_in_ball, MapUnderTest, Target};
use crate::markov::{
    estimate_pi, four_point_min_c, markov_functional, tree_distance, HeisenbergWalk, MarkovChainSpec, MarkovReport,
};
use crate::norms::{convexity_exponent, search_lambda, ConvexNormParams, Metric, MetricChoice};
use crate::sampling::{in_box, rng_for, slope, unit_vector};

/// A `δ`-separated, `δ`-covering subset of a cloud.
#[derive(Clone, Debug)]
pub struct Net {
    pub points: Vec<GroupElement>,
    pub delta: f64,
    pub metric: Metric,
    /// Cloud indices of the net points.
    pub indices: Vec<usize>,
}

impl Net {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of the nearest net point, ties to the lowest index.
    pub fn nearest(&self, g: &GroupElement) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, p) in self.points.iter().enumerate() {
            let d = self.metric.dist(p, g);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }
}

/// Farthest-point net: starting from the point nearest the identity, keep
/// adding the cloud point farthest from the net until all are within `δ`.
pub fn net_of_ball(cloud: &PointCloud, delta: f64) -> Result<Net> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!("net scale must be positive, got {delta}")));
    }
    if cloud.is_empty() {
        return Err(Error::InvalidParameter("empty cloud".into()));
    }
    let m = &cloud.metric;
    let origin = GroupElement::identity(m.algebra().dim());
    let start = (0..cloud.len())
        .min_by(|&a, &b| m.dist(&origin, &cloud.points[a]).total_cmp(&m.dist(&origin, &cloud.points[b])))
        .expect("nonempty");
    let mut indices = vec![start];
    let mut gap: Vec<f64> = cloud.points.iter().map(|p| m.dist(&cloud.points[start], p)).collect();
    loop {
        let (far, d) = gap.iter().enumerate().fold((0, f64::NEG_INFINITY), |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc });
        if d < delta {
            break;
        }
        indices.push(far);
        for (g, p) in gap.iter_mut().zip(&cloud.points) {
            *g = g.min(m.dist(&cloud.points[far], p));
        }
    }
    Ok(Net { points: indices.iter().map(|&i| cloud.points[i].clone()).collect(), delta, metric: m.clone(), indices })
}

/// Greedy net in a seeded random order: a point joins if it is at least `δ` from every member.
pub fn random_order_net(cloud: &PointCloud, delta: f64, seed: u64) -> Result<Net> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!("net scale must be positive, got {delta}")));
    }
    let m = &cloud.metric;
    let mut order: Vec<usize> = (0..cloud.len()).collect();
    order.shuffle(&mut rng_for(seed, 0));
    let mut indices: Vec<usize> = Vec::new();
    for i in order {
        if indices.iter().all(|&j| m.dist(&cloud.points[j], &cloud.points[i]) >= delta) {
            indices.push(i);
        }
    }
    Ok(Net { points: indices.iter().map(|&i| cloud.points[i].clone()).collect(), delta, metric: m.clone(), indices })
}

/// Largest `d(f(a), f(b)) / d(a, b)` over pairs of net points.
pub fn net_lipschitz(net: &Net, values: &[Vec<f64>], target: &Target) -> f64 {
    let mut best: f64 = 0.0;
    for i in 0..net.len() {
        for j in i + 1..net.len() {
            let d = net.metric.dist(&net.points[i], &net.points[j]);
            best = best.max(target.dist(&values[i], &values[j]) / d);
        }
    }
    best
}

/// Piecewise-constant extension of a map on a net, constant on nearest-point
/// cells. It is `2δ`-LLD with `Lip(2δ) ≤ 2D` where `D` bounds the net map.
pub fn voronoi_extend(net: &Net, values: Vec<Vec<f64>>, target: Target, radius: f64) -> Result<MapUnderTest> {
    if net.is_empty() {
        return Err(Error::InvalidParameter("cannot extend from an empty net".into()));
    }
    if values.len() != net.len() {
        return Err(Error::DimensionMismatch { expected: net.len(), got: values.len() });
    }
    let d = net_lipschitz(net, &values, &target);
    let lookup = net.clone();
    Ok(MapUnderTest::new(
        "voronoi",
        net.metric.clone(),
        radius,
        target,
        2.0 * net.delta,
        2.0 * d,
        Arc::new(move |g: &GroupElement| values[lookup.nearest(g)].clone()),
    ))
}

/// Sampled `Lip_f(s)`: the largest image ratio over random pairs of the ball at distance at least `s`.
pub fn sampled_lip(f: &MapUnderTest, s: f64, pairs: usize, seed: u64) -> Result<f64> {
    let bounds = f.domain.coordinate_box(f.radius)?;
    let mut best: f64 = 0.0;
    for i in 0..pairs {
        let mut rng = rng_for(seed, i as u64);
        let x = sample_in_ball(&f.domain, &bounds, f.radius, &mut rng);
        let y = sample_in_ball(&f.domain, &bounds, f.radius, &mut rng);
        let d = f.domain.dist(&x, &y);
        if d >= s {
            best = best.max(f.image_dist(&x, &y) / d);
        }
    }
    Ok(best)
}

/// `max ratio / min ratio` of `d_target / d_source` over all pairs; `+∞` if
/// distinct points share an image.
pub fn distortion_of_map(f: &MapUnderTest, points: &[GroupElement]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::InvalidParameter("distortion needs at least two points".into()));
    }
    let images: Vec<Vec<f64>> = points.iter().map(|p| f.eval(p)).collect();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let ds = f.domain.dist(&points[i], &points[j]);
            if ds == 0.0 {
                continue;
            }
            let r = f.target.dist(&images[i], &images[j]) / ds;
            lo = lo.min(r);
            hi = hi.max(r);
        }
    }
    Ok(if lo > 0.0 { hi / lo } else { f64::INFINITY })
}

/// One scale of a collapse scan.
#[derive(Clone, Debug, Serialize)]
pub struct CollapseRow {
    pub scale: f64,
    pub min_ratio: f64,
    pub witness: (GroupElement, GroupElement),
}

/// For each scale `t`, the smallest `d_target/d_source` over pairs at source
/// distance in `[t, 2t]`. Pairs are `(x, x·δ_ρ(u))` with `u` of unit norm and
/// `ρ ∈ [t, 2t]`; the unit vertical directions are always included.
pub fn collapse_scan(f: &MapUnderTest, scales: &[f64], pairs: usize, seed: u64) -> Result<Vec<CollapseRow>> {
    let m = &f.domain;
    let alg = m.algebra();
    let ball = m.coordinate_box(f.radius)?;
    let unit_box = m.coordinate_box(1.0)?;
    let top = alg.layer_range(alg.step());
    let mut rows = Vec::with_capacity(scales.len());
    for (si, &t) in scales.iter().enumerate() {
        let mut best: Option<CollapseRow> = None;
        let mut consider = |x: GroupElement, u: &GroupElement, rho: f64| {
            let y = GroupElement(alg.bch(&x.0, &alg.dilate(rho, u).0));
            let d = m.dist(&x, &y);
            if d <= 0.0 {
                return;
            }
            let r = f.image_dist(&x, &y) / d;
            if best.as_ref().is_none_or(|b| r < b.min_ratio) {
                best = Some(CollapseRow { scale: t, min_ratio: r, witness: (x, y) });
            }
        };
        for i in 0..pairs {
            let mut rng = rng_for(seed ^ (si as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15), i as u64);
            let x = sample_in_ball(m, &ball, f.radius, &mut rng);
            let raw = GroupElement(in_box(&mut rng, &unit_box));
            let n = m.norm(&raw);
            if n == 0.0 {
                continue;
            }
            let u = alg.dilate(1.0 / n, &raw);
            let rho = t * (1.0 + rng.random_range(0.0..1.0));
            consider(x, &u, rho);
        }
        for k in top.clone() {
            let mut c = vec![0.0; alg.dim()];
            c[k] = 1.0;
            let raw = GroupElement(c);
            let u = alg.dilate(1.0 / m.norm(&raw), &raw);
            consider(GroupElement::identity(alg.dim()), &u, t);
        }
        rows.push(best.unwrap_or(CollapseRow {
            scale: t,
            min_ratio: f64::NAN,
            witness: (GroupElement::identity(alg.dim()), GroupElement::identity(alg.dim())),
        }));
    }
    Ok(rows)
}

/// Least-squares slope of `log min_ratio` against `log scale`.
pub fn collapse_slope(rows: &[CollapseRow]) -> f64 {
    let pts: Vec<(f64, f64)> =
        rows.iter().filter(|r| r.min_ratio > 0.0).map(|r| (r.scale.ln(), r.min_ratio.ln())).collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    slope(&xs, &ys)
}

/// Ball sizes of the word metric on the integer Heisenberg group.
#[derive(Clone, Debug, Serialize)]
pub struct BallGrowth {
    /// `(n, |B(n)|)`.
    pub sizes: Vec<(usize, usize)>,
    /// Slope of `log|B(n)|` against `log n` over the upper half of the range.
    pub exponent: f64,
    /// The element cap was reached and the table stops early.
    pub truncated: bool,
}

/// Breadth-first search in `H¹(ℤ)` with generators `±X, ±Y`, in the integer
/// coordinates `(a, b, c)·(a', b', c') = (a+a', b+b', c+c'+ab')`.
pub fn discrete_ball_growth(n_max: usize, cap: usize) -> BallGrowth {
    type P = (i64, i64, i64);
    let gens: [P; 4] = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0)];
    let mut seen: HashSet<P> = HashSet::new();
    seen.insert((0, 0, 0));
    let mut frontier = vec![(0i64, 0i64, 0i64)];
    let mut sizes = vec![(0, 1)];
    let mut truncated = false;
    for n in 1..=n_max {
        let mut next = Vec::new();
        for &(a, b, c) in &frontier {
            for &(x, y, _) in &gens {
                let p = (a + x, b + y, c + a * y);
                if seen.insert(p) {
                    next.push(p);
                }
            }
        }
        if seen.len() > cap {
            truncated = true;
            break;
        }
        sizes.push((n, seen.len()));
        frontier = next;
    }
    let top: Vec<&(usize, usize)> = sizes.iter().filter(|(n, _)| *n >= 1 && 2 * *n >= sizes.len() - 1).collect();
    let xs: Vec<f64> = top.iter().map(|(n, _)| (*n as f64).ln()).collect();
    let ys: Vec<f64> = top.iter().map(|(_, s)| (*s as f64).ln()).collect();
    let exponent = if xs.len() >= 2 { slope(&xs, &ys) } else { f64::NAN };
    BallGrowth { sizes, exponent, truncated }
}

/// How the config names a metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetricSpec {
    /// `"N_INFTY"`, `"CONVEX"` (unit weights) or `"CONVEX_SEARCHED"`.
    Named(String),
    Full(MetricChoice),
}

/// A parsed experiment configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub group: String,
    pub metric: MetricSpec,
    pub map: String,
    pub seed: u64,
    #[serde(default)]
    pub samples: Option<usize>,
    #[serde(default)]
    pub params: Map<String, Value>,
    #[serde(default)]
    pub output: Option<String>,
    /// Inline algebra used when `group` is `"custom"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub algebra: Option<AlgebraSpec>,
}

pub const EXPERIMENTS: [&str; 11] = [
    "validate-algebra",
    "search-lambda",
    "cc-distance",
    "build-cubes",
    "carleson",
    "coarse-diff",
    "markov",
    "four-point",
    "net-distortion",
    "collapse-scan",
    "ball-growth",
];

const REQUIRED: [&str; 5] = ["experiment", "group", "metric", "map", "seed"];

impl ExperimentConfig {
    /// Parses JSON, listing every missing required field in one error.
    pub fn from_json(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text)?;
        let obj = v.as_object().ok_or_else(|| Error::Config("config must be a JSON object".into()))?;
        let missing: Vec<&str> = REQUIRED.iter().copied().filter(|k| !obj.contains_key(*k)).collect();
        if !missing.is_empty() {
            return Err(Error::Config(format!("missing fields: {}", missing.join(", "))));
        }
        let cfg: ExperimentConfig = serde_json::from_value(v)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Default configuration for an experiment.
    pub fn default_for(experiment: &str) -> Result<Self> {
        let (group, metric, map) = match experiment {
            "validate-algebra" => ("all", "N_INFTY", "none"),
            "search-lambda" | "four-point" => ("H1", "CONVEX_SEARCHED", "none"),
            "cc-distance" | "build-cubes" => ("H1", "N_INFTY", "none"),
            "carleson" => ("H1", "N_INFTY", "pi"),
            "coarse-diff" => ("H1", "N_INFTY", "sawtooth_pi"),
            "markov" => ("H1", "CONVEX_SEARCHED", "identity"),
            "net-distortion" => ("H1", "N_INFTY", "pi"),
            "collapse-scan" => ("H1", "N_INFTY", "euclidean_identity"),
            "ball-growth" => ("H1", "N_INFTY", "none"),
            other => return Err(Error::UnknownExperiment(other.to_string())),
        };
        Ok(ExperimentConfig {
            experiment: experiment.to_string(),
            group: group.to_string(),
            metric: MetricSpec::Named(metric.to_string()),
            map: map.to_string(),
            seed: 0,
            samples: None,
            params: Map::new(),
            output: None,
            algebra: None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !EXPERIMENTS.contains(&self.experiment.as_str()) {
            return Err(Error::UnknownExperiment(self.experiment.clone()));
        }
        if self.group == "custom" && self.algebra.is_none() {
            return Err(Error::Config("group `custom` needs an `algebra` field".into()));
        }
        if self.group != "all" {
            self.algebra()?;
        }
        if let MetricSpec::Named(n) = &self.metric {
            if !["N_INFTY", "CONVEX", "CONVEX_SEARCHED"].contains(&n.as_str()) {
                return Err(Error::Config(format!("unknown metric `{n}`")));
            }
        }
        let known = ["none", "identity", "pi", "euclidean_identity", "sawtooth_pi", "bump"];
        if !known.contains(&self.map.as_str()) {
            return Err(Error::UnknownMap(self.map.clone()));
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))[..16].to_string()
    }

    fn f(&self, key: &str, default: f64) -> Result<f64> {
        match self.params.get(key) {
            None => Ok(default),
            Some(v) => v.as_f64().ok_or_else(|| Error::Config(format!("parameter `{key}` must be a number"))),
        }
    }

    fn u(&self, key: &str, default: usize) -> Result<usize> {
        match self.params.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_u64()
                .map(|x| x as usize)
                .ok_or_else(|| Error::Config(format!("parameter `{key}` must be a nonnegative integer"))),
        }
    }

    fn list(&self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.params.get(key) {
            None => Ok(default.to_vec()),
            Some(Value::Array(a)) => a
                .iter()
                .map(|v| v.as_f64().ok_or_else(|| Error::Config(format!("parameter `{key}` must hold numbers"))))
                .collect(),
            Some(_) => Err(Error::Config(format!("parameter `{key}` must be an array"))),
        }
    }

    fn s(&self, key: &str, default: &str) -> Result<String> {
        match self.params.get(key) {
            None => Ok(default.to_string()),
            Some(v) => v.as_str().map(str::to_string).ok_or_else(|| Error::Config(format!("parameter `{key}` must be a string"))),
        }
    }

    fn samples_or(&self, default: usize) -> usize {
        self.samples.unwrap_or(default)
    }

    fn algebra(&self) -> Result<GradedLieAlgebra> {
        match (&self.algebra, self.group.as_str()) {
            (Some(spec), "custom") => GradedLieAlgebra::from_spec(spec),
            _ => GradedLieAlgebra::builtin(&self.group),
        }
    }

    fn metric(&self, alg: &GradedLieAlgebra) -> Result<Metric> {
        match &self.metric {
            MetricSpec::Full(choice) => Metric::new(alg.clone(), choice.clone()),
            MetricSpec::Named(n) => match n.as_str() {
                "N_INFTY" => Ok(Metric::n_infty(alg.clone())),
                "CONVEX" => Metric::convex(alg.clone(), ConvexNormParams::unit(alg.step())),
                _ => {
                    let s = search_lambda(alg, self.u("lambda_budget", 60)?, self.seed)?;
                    Metric::convex(alg.clone(), s.params)
                }
            },
        }
    }
}

/// Rows destined for a CSV file; `seed` and `config_hash` columns are appended on write.
#[derive(Clone, Debug, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// A float with 12 significant digits.
pub fn fmt_f(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.11e}")
    }
}

fn fmt_point(g: &GroupElement) -> String {
    g.0.iter().map(|x| fmt_f(*x)).collect::<Vec<_>>().join(";")
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self, seed: u64, hash: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{},seed,config_hash", self.header.join(","));
        for r in &self.rows {
            let _ = writeln!(out, "{},{seed},{hash}", r.join(","));
        }
        out
    }
}

fn carleson_table(cfg: &ExperimentConfig) -> Result<Table> {
    let alg = cfg.algebra()?;
    let metric = cfg.metric(&alg)?;
    let radius = cfg.f("radius", 1.0)?;
    let cloud = sample_ball(&metric, radius, cfg.samples_or(2000), cfg.seed)?;
    let hier = build_hierarchy(cloud, cfg.f("tau", 0.5)?, cfg.u("depth", 3)?, cfg.seed)?;
    let f = registry(&cfg.map, metric, radius)?;
    let kind: Kind = serde_json::from_value(Value::String(cfg.s("kind", "THETA_UC")?))?;
    let sampling = CubeSampling { directions: cfg.u("directions", 8)?, lines: cfg.u("lines", 4)?, pairs: cfg.u("pairs", 100)? };
    let depth = hier.depth;
    let t = carleson_sum(&f, &hier, (0, 0), depth, cfg.f("eps", 0.1)?, cfg.f("p", 2.0)?, kind, sampling, cfg.seed)?;
    let mut table = Table::new(&["level", "cubes", "sum", "total", "normalized"]);
    for l in &t.levels {
        table.push(vec![l.level.to_string(), l.cubes.to_string(), fmt_f(l.sum), fmt_f(t.total), fmt_f(t.normalized)]);
    }
    Ok(table)
}

fn coarse_diff_table(cfg: &ExperimentConfig) -> Result<Table> {
    let alg = cfg.algebra()?;
    let metric = cfg.metric(&alg)?;
    let radius = cfg.f("radius", 1.0)?;
    let cloud = sample_ball(&metric, radius, cfg.samples_or(2000), cfg.seed)?;
    let hier = build_hierarchy(cloud, cfg.f("tau", 0.5)?, cfg.u("level", 1)?.max(1), cfg.seed)?;
    let level = cfg.u("level", 1)?;
    let f = registry(&cfg.map, metric, radius)?;
    let sampling = CubeSampling { directions: cfg.u("directions", 8)?, lines: cfg.u("lines", 4)?, pairs: cfg.u("pairs", 100)? };
    let (eps, p) = (cfg.f("eps", 0.1)?, cfg.f("p", 2.0)?);
    let shrink = cfg.f("shrink", 0.5)?;
    let fit_samples = cfg.u("fit_samples", 400)?;
    let n = alg.horizontal_dim();
    let dirs: Vec<Vec<f64>> = (0..cfg.u("speed_directions", 4)?).map(|i| unit_vector(&mut rng_for(cfg.seed, i as u64), n)).collect();
    let mut table = Table::new(&["level", "cube", "alpha", "beta", "cd_uc", "cd_m", "samples", "ci"]);
    let cubes = hier.levels[level].len().min(cfg.u("max_cubes", 16)?);
    for id in 0..cubes {
        let cube_seed = cfg.seed.wrapping_add(id as u64);
        let a = alpha_cube(&f, &hier, level, id, eps, p, Kind::Partial, sampling, cube_seed)?;
        let beta = if f.target.is_linear() {
            alpha_cube(&f, &hier, level, id, eps, p, Kind::ThetaUc, sampling, cube_seed)?.report.value
        } else {
            f64::NAN
        };
        let cd_uc = if f.target.is_linear() {
            fit_affine(&f, &hier, level, id, shrink, fit_samples, cube_seed)?.normalized
        } else {
            f64::NAN
        };
        let cd_m = fit_geodesic_speeds(&f, &hier, level, id, &dirs, shrink, fit_samples, cube_seed)?.sup_err;
        table.push(vec![
            level.to_string(),
            id.to_string(),
            fmt_f(a.report.value),
            fmt_f(beta),
            fmt_f(cd_uc),
            fmt_f(cd_m),
            a.report.samples.to_string(),
            fmt_f(a.report.ci_half_width),
        ]);
    }
    Ok(table)
}

fn markov_table(cfg: &ExperimentConfig) -> Result<Table> {
    let trials = cfg.samples_or(1000);
    let p = cfg.f("p", 2.0)?;
    let family = cfg.s("chain", "walk")?;
    let mut table = Table::new(&["chain", "p", "trials", "lhs", "rhs", "ratio", "pi_estimate"]);
    let mut reports: Vec<MarkovReport> = Vec::new();
    let mut push = |name: String, r: MarkovReport, reports: &mut Vec<MarkovReport>| {
        reports.push(r.clone());
        let pi = estimate_pi(reports, p);
        table.push(vec![name, fmt_f(p), trials.to_string(), fmt_f(r.lhs), fmt_f(r.rhs), fmt_f(r.ratio()), fmt_f(pi)]);
    };
    match family.as_str() {
        "walk" => {
            let n = cfg.u("states", 64)?;
            let horizon = cfg.u("horizon", 64)?;
            let c = MarkovChainSpec::path_walk(n, horizon)?;
            let r = markov_functional(&c, horizon, |a, b| (*a as f64 - *b as f64).abs(), p, trials, cfg.seed)?;
            push(format!("walk{n}"), r, &mut reports);
        }
        "tree" => {
            for d in cfg.list("depths", &[4.0, 6.0, 8.0])? {
                let d = d as usize;
                let c = MarkovChainSpec::binary_tree_walk(d)?;
                let r = markov_functional(&c, d, |a, b| tree_distance(*a, *b), p, trials, cfg.seed)?;
                push(format!("tree{d}"), r, &mut reports);
            }
        }
        "heisenberg" => {
            let alg = GradedLieAlgebra::heisenberg(1)?;
            let metric = cfg.metric(&alg)?;
            let walk = HeisenbergWalk::new()?;
            for h in cfg.list("depths", &[8.0, 16.0, 32.0])? {
                let h = h as usize;
                let r = markov_functional(&walk, h, |a, b| metric.dist(a, b), p, trials, cfg.seed)?;
                push(format!("heisenberg{h}"), r, &mut reports);
            }
        }
        other => return Err(Error::Config(format!("unknown chain family `{other}`"))),
    }
    Ok(table)
}

fn four_point_table(cfg: &ExperimentConfig) -> Result<Table> {
    let alg = cfg.algebra()?;
    let metric = cfg.metric(&alg)?;
    let p = cfg.f("p", convexity_exponent(&alg))?;
    let quads = cfg.samples_or(10_000);
    let mut table = Table::new(&["quadruples", "p", "step", "max_c", "worst_index"]);
    let (worst, at) = four_point_search(&metric, p, quads, cfg.seed)?;
    table.push(vec![quads.to_string(), fmt_f(p), alg.step().to_string(), fmt_f(worst), at.to_string()]);
    Ok(table)
}

/// Largest four-point constant over random quadruples of the unit ball, and where it occurred.
pub fn four_point_search(metric: &Metric, p: f64, quads: usize, seed: u64) -> Result<(f64, usize)> {
    let alg = metric.algebra();
    let bounds = metric.coordinate_box(1.0)?;
    let mut worst = (0.0f64, 0usize);
    for i in 0..quads {
        let mut rng = rng_for(seed, i as u64);
        let q: Vec<GroupElement> = (0..4).map(|_| sample_in_ball(metric, &bounds, 1.0, &mut rng)).collect();
        let c = four_point_min_c(metric, &q[0], &q[1], &q[2], &q[3], p, alg.step());
        if c > worst.0 || c.is_nan() {
            worst = (c, i);
        }
    }
    Ok(worst)
}

fn net_distortion_table(cfg: &ExperimentConfig) -> Result<Table> {
    let alg = cfg.algebra()?;
    let metric = cfg.metric(&alg)?;
    let radius = cfg.f("radius", 1.0)?;
    let cloud = sample_ball(&metric, radius, cfg.samples_or(2000), cfg.seed)?;
    let f = registry(&cfg.map, metric.clone(), radius)?;
    let mut table =
        Table::new(&["delta", "net_size", "random_net_size", "net_distortion", "lip_2delta", "lip_bound", "fit_sup_err", "fitted_distortion"]);
    for delta in cfg.list("deltas", &[0.4, 0.2])? {
        let net = net_of_ball(&cloud, delta)?;
        let rnet = random_order_net(&cloud, delta, cfg.seed)?;
        let values: Vec<Vec<f64>> = net.points.iter().map(|g| f.eval(g)).collect();
        let net_dist = if net.len() >= 2 { distortion_of_map(&f, &net.points)? } else { 1.0 };
        let ext = voronoi_extend(&net, values, f.target.clone(), radius)?;
        let lip = sampled_lip(&ext, 2.0 * delta, cfg.u("pairs", 2000)?, cfg.seed)?;
        // coarse fit of the extension on the root cube
        let hier = build_hierarchy(cloud.clone(), 0.5, 1, cfg.seed)?;
        let (fit_err, fitted) = if ext.target.is_linear() {
            let fit = fit_affine(&ext, &hier, 0, 0, 1.0, cfg.u("fit_samples", 400)?, cfg.seed)?;
            let (a, off) = (fit.a.clone(), fit.offset.clone());
            let n = alg.horizontal_dim();
            let target = ext.target.clone();
            let affine = MapUnderTest::new(
                "fitted",
                metric.clone(),
                radius,
                target,
                0.0,
                1.0,
                Arc::new(move |g: &GroupElement| {
                    a.iter().zip(&off).map(|(row, o)| o + row.iter().zip(&g.0[..n]).map(|(x, y)| x * y).sum::<f64>()).collect()
                }),
            );
            let fd = if net.len() >= 2 { distortion_of_map(&affine, &net.points)? } else { 1.0 };
            (fit.normalized, fd)
        } else {
            (f64::NAN, f64::NAN)
        };
        table.push(vec![
            fmt_f(delta),
            net.len().to_string(),
            rnet.len().to_string(),
            fmt_f(net_dist),
            fmt_f(lip),
            fmt_f(ext.lip_psi),
            fmt_f(fit_err),
            fmt_f(fitted),
        ]);
    }
    Ok(table)
}

/// Runs the configured experiment and returns its table.
pub fn experiment_table(cfg: &ExperimentConfig) -> Result<Table> {
    cfg.validate()?;
    match cfg.experiment.as_str() {
        "validate-algebra" => {
            let algebras: Vec<GradedLieAlgebra> = if cfg.group == "all" {
                ["R1", "R3", "H1", "H2", "Engel"].iter().map(|s| GradedLieAlgebra::builtin(s)).collect::<Result<_>>()?
            } else {
                vec![cfg.algebra()?]
            };
            let mut table =
                Table::new(&["group", "dim", "step", "homogeneous_dim", "antisymmetry", "grading", "jacobi", "stratification", "assoc_rel_err"]);
            for alg in algebras {
                let name = alg.name().to_string();
                let rep = alg.validate();
                let err = associativity_error(&alg, cfg.samples_or(1000), cfg.seed);
                table.push(vec![
                    name,
                    alg.dim().to_string(),
                    alg.step().to_string(),
                    alg.homogeneous_dim().to_string(),
                    rep.antisymmetry.len().to_string(),
                    rep.grading.len().to_string(),
                    rep.jacobi.len().to_string(),
                    rep.stratification.len().to_string(),
                    fmt_f(err),
                ]);
            }
            Ok(table)
        }
        "search-lambda" => {
            let alg = cfg.algebra()?;
            let s = search_lambda(&alg, cfg.u("lambda_budget", cfg.samples_or(60))?, cfg.seed)?;
            let mut table = Table::new(&["group", "lambdas", "c", "c_raw", "min_defect", "verify_pairs"]);
            let l = s.params.lambdas.iter().map(|x| fmt_f(*x)).collect::<Vec<_>>().join(";");
            table.push(vec![cfg.group.clone(), l, fmt_f(s.c), fmt_f(s.c_raw), fmt_f(s.min_defect), s.samples.to_string()]);
            Ok(table)
        }
        "cc-distance" => {
            let alg = cfg.algebra()?;
            let mut target = vec![0.0; alg.dim()];
            *target.last_mut().expect("nonzero dim") = 1.0;
            let target = GroupElement(cfg.list("target", &target)?);
            let origin = GroupElement::identity(alg.dim());
            let lower = cc_lower(&alg, &origin, &target)?;
            let mut table = Table::new(&["segments", "lower", "upper", "length", "residual"]);
            for s in cfg.list("segments", &[4.0, 8.0, 16.0, 32.0])? {
                let opts = CcOptions { segments: s as usize, budget: cfg.samples_or(20_000), seed: cfg.seed, ..CcOptions::default() };
                let e = cc_upper(&alg, &origin, &target, &opts)?;
                table.push(vec![(s as usize).to_string(), fmt_f(lower), fmt_f(e.distance), fmt_f(e.length), fmt_f(e.residual)]);
            }
            Ok(table)
        }
        "build-cubes" => {
            let alg = cfg.algebra()?;
            let metric = cfg.metric(&alg)?;
            let cloud = sample_ball(&metric, cfg.f("radius", 1.0)?, cfg.samples_or(2000), cfg.seed)?;
            let hier = build_hierarchy(cloud, cfg.f("tau", 0.125)?, cfg.u("depth", 3)?, cfg.seed)?;
            let rep = verify_hierarchy(&hier);
            let mut table = Table::new(&["level", "cube", "parent", "center", "members", "a0_hat", "a1_hat", "exact"]);
            for level in &hier.levels {
                for c in level {
                    table.push(vec![
                        c.level.to_string(),
                        c.id.to_string(),
                        c.parent.map_or("-".to_string(), |p| p.to_string()),
                        fmt_point(hier.center(c)),
                        c.members.len().to_string(),
                        fmt_f(rep.a0_hat),
                        fmt_f(rep.a1_hat),
                        rep.exact_properties_hold().to_string(),
                    ]);
                }
            }
            Ok(table)
        }
        "carleson" => carleson_table(cfg),
        "coarse-diff" => coarse_diff_table(cfg),
        "markov" => markov_table(cfg),
        "four-point" => four_point_table(cfg),
        "net-distortion" => net_distortion_table(cfg),
        "collapse-scan" => {
            let alg = cfg.algebra()?;
            let metric = cfg.metric(&alg)?;
            let f = registry(&cfg.map, metric, cfg.f("radius", 1.0)?)?;
            let scales = cfg.list("scales", &[0.4, 0.2, 0.1, 0.05, 0.025])?;
            let rows = collapse_scan(&f, &scales, cfg.samples_or(500), cfg.seed)?;
            let fitted = collapse_slope(&rows);
            let mut table = Table::new(&["scale", "min_ratio", "witness_x", "witness_y", "loglog_slope"]);
            for r in rows {
                table.push(vec![fmt_f(r.scale), fmt_f(r.min_ratio), fmt_point(&r.witness.0), fmt_point(&r.witness.1), fmt_f(fitted)]);
            }
            Ok(table)
        }
        "ball-growth" => {
            let g = discrete_ball_growth(cfg.u("n_max", 30)?, cfg.u("cap", 50_000_000)?);
            let mut table = Table::new(&["n", "size", "exponent", "truncated"]);
            for (n, s) in &g.sizes {
                table.push(vec![n.to_string(), s.to_string(), fmt_f(g.exponent), g.truncated.to_string()]);
            }
            Ok(table)
        }
        other => Err(Error::UnknownExperiment(other.to_string())),
    }
}

/// Largest `|(gh)k − g(hk)|_∞ / max(1, |(gh)k|_∞)` over random triples in `[−1, 1]^d`.
pub fn associativity_error(alg: &GradedLieAlgebra, triples: usize, seed: u64) -> f64 {
    let b = vec![1.0; alg.dim()];
    let mut worst: f64 = 0.0;
    for i in 0..triples {
        let mut rng = rng_for(seed, i as u64);
        let (g, h, k) = (in_box(&mut rng, &b), in_box(&mut rng, &b), in_box(&mut rng, &b));
        let left = alg.bch(&alg.bch(&g, &h), &k);
        let right = alg.bch(&g, &alg.bch(&h, &k));
        let scale = left.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        let diff = left.iter().zip(&right).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        worst = worst.max(diff / scale);
    }
    worst
}

/// Runs the experiment and writes its CSV under `out_dir`; returns the file path.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<PathBuf> {
    let table = experiment_table(cfg)?;
    std::fs::create_dir_all(out_dir)?;
    let name = cfg.output.clone().unwrap_or_else(|| format!("{}.csv", cfg.experiment));
    let path = out_dir.join(name);
    std::fs::write(&path, table.to_csv(cfg.seed, &cfg.hash()))?;
    Ok(path)
}
