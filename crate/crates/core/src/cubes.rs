//! Dyadic cube hierarchies on finite samples of a ball.
//!
//! Level `k` cubes are Voronoi cells of a greedy net at separation
//! `radius·τ^k`, with every point forced to stay inside the cube it belongs
//! to at level `k − 1`. Nets are nested, so each cube's center is also the
//! center of one of its children.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lie::GroupElement;
use crate::norms::{Metric, MetricChoice};
use crate::sampling::{in_box, rng_for, slope};

const ACCEPTANCE_FLOOR: f64 = 1e-4;

/// A finite sample of the ball of radius `radius` about the identity.
#[derive(Clone, Debug)]
pub struct PointCloud {
    pub metric: Metric,
    pub points: Vec<GroupElement>,
    pub radius: f64,
    pub seed: u64,
}

impl PointCloud {
    /// Wraps explicit points; they must lie in the stated ball.
    pub fn from_points(metric: Metric, points: Vec<GroupElement>, radius: f64) -> Result<Self> {
        for p in &points {
            crate::error::check_dim(metric.algebra().dim(), p.dim())?;
            if metric.norm(p) > radius * (1.0 + 1e-9) {
                return Err(Error::Precondition(format!("point {:?} lies outside the ball", p.0)));
            }
        }
        Ok(PointCloud { metric, points, radius, seed: 0 })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Rejection-samples `count` points of the metric ball from a coordinate box containing it.
pub fn sample_ball(metric: &Metric, radius: f64, count: usize, seed: u64) -> Result<PointCloud> {
    if count == 0 || !(radius > 0.0) {
        return Err(Error::InvalidParameter("need count ≥ 1 and radius > 0".into()));
    }
    let bounds = metric.coordinate_box(radius)?;
    let mut points = Vec::with_capacity(count);
    let mut attempts = 0u64;
    for i in 0..count {
        let mut rng = rng_for(seed, i as u64);
        loop {
            attempts += 1;
            let g = GroupElement(in_box(&mut rng, &bounds));
            if metric.norm(&g) <= radius {
                points.push(g);
                break;
            }
            if attempts >= 10_000 && (points.len() as f64) < ACCEPTANCE_FLOOR * attempts as f64 {
                return Err(Error::AcceptanceTooLow {
                    rate: points.len() as f64 / attempts as f64,
                    floor: ACCEPTANCE_FLOOR,
                });
            }
        }
    }
    Ok(PointCloud { metric: metric.clone(), points, radius, seed })
}

/// One cube of a hierarchy.
#[derive(Clone, Debug, Serialize)]
pub struct Cube {
    pub level: usize,
    pub id: usize,
    /// Index of the center in the cloud.
    pub center: usize,
    pub members: Vec<usize>,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Distance from the center to the nearest cloud point outside the cube.
    pub inner_radius: f64,
    pub diameter: f64,
}

/// Nested partitions of a cloud, level 0 being the whole cloud.
#[derive(Clone, Debug)]
pub struct CubeHierarchy {
    pub cloud: PointCloud,
    pub tau: f64,
    pub depth: usize,
    pub levels: Vec<Vec<Cube>>,
    pub a0_hat: f64,
    pub a1_hat: f64,
}

impl CubeHierarchy {
    /// Side length `ℓ(Q) = radius·τ^k` of a level-`k` cube.
    pub fn scale(&self, level: usize) -> f64 {
        self.cloud.radius * self.tau.powi(level as i32)
    }

    pub fn cube(&self, level: usize, id: usize) -> Option<&Cube> {
        self.levels.get(level).and_then(|l| l.get(id))
    }

    /// Empirical measure of a cube, as a fraction of the cloud.
    pub fn measure(&self, cube: &Cube) -> f64 {
        cube.members.len() as f64 / self.cloud.len() as f64
    }

    pub fn center(&self, cube: &Cube) -> &GroupElement {
        &self.cloud.points[cube.center]
    }

    /// Radius of the ball `B_Q` contained in the cube.
    pub fn ball_radius(&self, cube: &Cube) -> f64 {
        (self.a0_hat * self.scale(cube.level)).min(self.cloud.radius)
    }

    /// All cubes of level `level` descending from `root` (given as level and id).
    pub fn descendants(&self, root: (usize, usize), level: usize) -> Vec<usize> {
        let mut ids = vec![root.1];
        for l in root.0..level {
            ids = ids.iter().flat_map(|&i| self.levels[l][i].children.iter().copied()).collect();
        }
        ids
    }
}

// Lower bound for the distance in terms of the first coordinate, used to prune scans.
fn first_coord_factor(metric: &Metric) -> f64 {
    match metric.choice() {
        MetricChoice::NInfty { weights } => weights[0],
        _ => 1.0,
    }
}

// Points sorted by first coordinate, for pruned nearest-neighbour scans.
struct SortedIndex {
    keys: Vec<(f64, usize)>,
}

impl SortedIndex {
    fn new(points: &[GroupElement], ids: impl Iterator<Item = usize>) -> Self {
        let mut keys: Vec<(f64, usize)> = ids.map(|i| (points[i].0[0], i)).collect();
        keys.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        SortedIndex { keys }
    }

    fn insert(&mut self, key: f64, id: usize) {
        let pos = self.keys.partition_point(|&(k, i)| k < key || (k == key && i < id));
        self.keys.insert(pos, (key, id));
    }

    /// Visits entries in order of increasing first-coordinate gap while
    /// `visit` returns the current pruning radius and it exceeds the gap.
    fn scan(&self, key: f64, factor: f64, mut visit: impl FnMut(usize) -> f64) {
        let pos = self.keys.partition_point(|&(k, _)| k < key);
        let (mut lo, mut hi) = (pos, pos);
        let mut bound = f64::INFINITY;
        loop {
            let left = (lo > 0).then(|| key - self.keys[lo - 1].0);
            let right = (hi < self.keys.len()).then(|| self.keys[hi].0 - key);
            let take_left = match (left, right) {
                (None, None) => return,
                (Some(_), None) => true,
                (None, Some(_)) => false,
                (Some(l), Some(r)) => l <= r,
            };
            let gap = if take_left { left.unwrap() } else { right.unwrap() };
            if factor * gap > bound {
                return;
            }
            let id = if take_left {
                lo -= 1;
                self.keys[lo].1
            } else {
                hi += 1;
                self.keys[hi - 1].1
            };
            bound = visit(id);
        }
    }
}

/// Builds the cube hierarchy of `cloud` down to level `depth`.
pub fn build_hierarchy(cloud: PointCloud, tau: f64, depth: usize, seed: u64) -> Result<CubeHierarchy> {
    if !(tau > 0.0 && tau <= 0.5) {
        return Err(Error::InvalidParameter(format!("τ must lie in (0, 1/2], got {tau}")));
    }
    if depth == 0 {
        return Err(Error::InvalidParameter("depth must be at least 1".into()));
    }
    if cloud.is_empty() {
        return Err(Error::InvalidParameter("cloud is empty".into()));
    }
    let metric = &cloud.metric;
    let pts = &cloud.points;
    let n = pts.len();
    let factor = first_coord_factor(metric);

    // Root: the whole cloud, centered at the point nearest the identity.
    let root_center = (0..n)
        .map(|i| (metric.norm(&pts[i]), i))
        .fold((f64::INFINITY, 0), |a, b| if b.0 < a.0 { b } else { a })
        .1;
    let mut levels = vec![vec![Cube {
        level: 0,
        id: 0,
        center: root_center,
        members: (0..n).collect(),
        parent: None,
        children: vec![],
        inner_radius: f64::INFINITY,
        diameter: 0.0,
    }]];
    let mut owner_prev = vec![0usize; n];
    let mut net: Vec<usize> = vec![root_center];

    let mut order: Vec<usize> = (0..n).collect();
    {
        use rand::seq::SliceRandom;
        let mut rng = rng_for(seed, 0);
        order.shuffle(&mut rng);
    }

    for k in 1..=depth {
        let sep = cloud.radius * tau.powi(k as i32);
        // Nested greedy net.
        let mut is_center = vec![false; n];
        for &c in &net {
            is_center[c] = true;
        }
        let mut index = SortedIndex::new(pts, net.iter().copied());
        for &i in &order {
            if is_center[i] {
                continue;
            }
            let mut far = true;
            index.scan(pts[i].0[0], factor, |c| {
                if metric.dist(&pts[c], &pts[i]) < sep {
                    far = false;
                    -1.0
                } else {
                    sep
                }
            });
            if far {
                is_center[i] = true;
                net.push(i);
                index.insert(pts[i].0[0], i);
            }
        }

        // Each center's cube lives inside the cube containing it one level up.
        let prev = &levels[k - 1];
        let mut cubes: Vec<Cube> = net
            .iter()
            .enumerate()
            .map(|(cid, &c)| Cube {
                level: k,
                id: cid,
                center: c,
                members: vec![],
                parent: Some(owner_prev[c]),
                children: vec![],
                inner_radius: 0.0,
                diameter: 0.0,
            })
            .collect();
        let mut per_parent: Vec<Vec<usize>> = vec![Vec::new(); prev.len()];
        for cube in &cubes {
            per_parent[cube.parent.expect("set above")].push(cube.id);
        }
        let parent_index: Vec<SortedIndex> = per_parent
            .iter()
            .map(|ids| {
                let mut s = SortedIndex::new(pts, std::iter::empty());
                for &cid in ids {
                    s.insert(pts[cubes[cid].center].0[0], cid);
                }
                s
            })
            .collect();

        let mut owner = vec![0usize; n];
        for i in 0..n {
            let p = owner_prev[i];
            let mut best = (f64::INFINITY, usize::MAX);
            let idx = &parent_index[p];
            // Keys in the per-parent index are cube ids.
            idx.scan(pts[i].0[0], factor, |cid| {
                let d = metric.dist(&pts[cubes[cid].center], &pts[i]);
                if d < best.0 || (d == best.0 && cid < best.1) {
                    best = (d, cid);
                }
                // Equal distances must still be visited for the tie rule.
                best.0 * (1.0 + 1e-12) + 1e-300
            });
            owner[i] = best.1;
            cubes[best.1].members.push(i);
        }
        let prev_mut = &mut levels[k - 1];
        for (p, ids) in per_parent.into_iter().enumerate() {
            prev_mut[p].children = ids;
        }
        levels.push(cubes);
        owner_prev = owner;
    }

    let mut hier = CubeHierarchy { cloud, tau, depth, levels, a0_hat: 0.0, a1_hat: 0.0 };
    measure_cubes(&mut hier);
    Ok(hier)
}

// Fills inner radii and diameters, then the hierarchy constants.
fn measure_cubes(hier: &mut CubeHierarchy) {
    let metric = hier.cloud.metric.clone();
    let pts = &hier.cloud.points;
    let factor = first_coord_factor(&metric);
    let all = SortedIndex::new(pts, 0..pts.len());
    for level in hier.levels.iter_mut() {
        let mut owner = vec![usize::MAX; pts.len()];
        for cube in level.iter() {
            for &m in &cube.members {
                owner[m] = cube.id;
            }
        }
        for cube in level.iter_mut() {
            let z = &pts[cube.center];
            let mut inner = f64::INFINITY;
            all.scan(z.0[0], factor, |j| {
                if owner[j] != cube.id {
                    inner = inner.min(metric.dist(z, &pts[j]));
                }
                inner
            });
            cube.inner_radius = inner;
            if cube.level == 0 {
                // The root is the whole sample; its diameter is not audited.
                cube.diameter = f64::NAN;
                continue;
            }
            let mut diam: f64 = 0.0;
            for (a, &i) in cube.members.iter().enumerate() {
                for &j in &cube.members[a + 1..] {
                    diam = diam.max(metric.dist(&pts[i], &pts[j]));
                }
            }
            cube.diameter = diam;
        }
    }
    let (a0, a1) = level_constants(hier);
    hier.a0_hat = a0.iter().copied().filter(|x| x.is_finite()).fold(f64::INFINITY, f64::min) * (1.0 - 1e-12);
    hier.a1_hat = a1.iter().copied().filter(|x| !x.is_nan()).fold(0.0, f64::max);
    if !hier.a0_hat.is_finite() {
        hier.a0_hat = 1.0;
    }
}

// Per-level constants: min inner radius and max diameter, both over ℓ(Q).
fn level_constants(hier: &CubeHierarchy) -> (Vec<f64>, Vec<f64>) {
    let mut a0 = Vec::new();
    let mut a1 = Vec::new();
    for (k, level) in hier.levels.iter().enumerate() {
        let s = hier.scale(k);
        if k == 0 {
            a0.push(f64::INFINITY);
            a1.push(f64::NAN);
            continue;
        }
        a0.push(level.iter().map(|c| c.inner_radius / s).fold(f64::INFINITY, f64::min));
        a1.push(level.iter().map(|c| c.diameter / s).fold(0.0, f64::max));
    }
    (a0, a1)
}

/// Outcome of [`verify_hierarchy`].
#[derive(Clone, Debug, Serialize)]
pub struct HierarchyReport {
    /// `(level, cube)` pairs whose membership breaks the partition.
    pub partition_failures: Vec<(usize, usize)>,
    pub nesting_failures: Vec<(usize, usize)>,
    pub diameter_failures: Vec<(usize, usize)>,
    pub ball_failures: Vec<(usize, usize)>,
    pub a0_hat: f64,
    pub a1_hat: f64,
    /// Per-level `min inner radius / ℓ` (level 0 is unbounded).
    pub a0_by_level: Vec<f64>,
    pub a1_by_level: Vec<f64>,
    /// Per-level mean member count.
    pub mean_members: Vec<f64>,
    /// Slope of `log(mean members)` against `log ℓ`.
    pub cardinality_exponent: f64,
}

impl HierarchyReport {
    pub fn exact_properties_hold(&self) -> bool {
        self.partition_failures.is_empty()
            && self.nesting_failures.is_empty()
            && self.diameter_failures.is_empty()
            && self.ball_failures.is_empty()
    }

    /// Largest over smallest value of the per-level constants, skipping level 0.
    pub fn level_variation(&self) -> (f64, f64) {
        let var = |v: &[f64]| {
            let v = &v[1.min(v.len())..];
            if v.is_empty() {
                return 1.0;
            }
            let hi = v.iter().copied().fold(0.0, f64::max);
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            hi / lo
        };
        (var(&self.a0_by_level), var(&self.a1_by_level))
    }
}

/// Audits partition, nesting, the diameter bound and the inner-ball property.
pub fn verify_hierarchy(hier: &CubeHierarchy) -> HierarchyReport {
    let pts = &hier.cloud.points;
    let metric = &hier.cloud.metric;
    let n = pts.len();
    let mut report = HierarchyReport {
        partition_failures: vec![],
        nesting_failures: vec![],
        diameter_failures: vec![],
        ball_failures: vec![],
        a0_hat: hier.a0_hat,
        a1_hat: hier.a1_hat,
        a0_by_level: vec![],
        a1_by_level: vec![],
        mean_members: vec![],
        cardinality_exponent: f64::NAN,
    };
    let factor = first_coord_factor(metric);
    let all = SortedIndex::new(pts, 0..n);
    let mut prev_owner: Option<Vec<usize>> = None;
    for (k, level) in hier.levels.iter().enumerate() {
        let mut owner = vec![usize::MAX; n];
        for cube in level {
            for &m in &cube.members {
                if m >= n || owner[m] != usize::MAX {
                    report.partition_failures.push((k, cube.id));
                    continue;
                }
                owner[m] = cube.id;
            }
        }
        if let Some(i) = owner.iter().position(|&o| o == usize::MAX) {
            // An unassigned point: blame the cube nearest to it.
            let near = level
                .iter()
                .map(|c| (metric.dist(&pts[c.center], &pts[i]), c.id))
                .fold((f64::INFINITY, 0), |a, b| if b.0 < a.0 { b } else { a });
            report.partition_failures.push((k, near.1));
        }
        if let Some(po) = &prev_owner {
            for cube in level {
                let Some(p) = cube.parent else {
                    report.nesting_failures.push((k, cube.id));
                    continue;
                };
                if cube.members.iter().any(|&m| m < n && po[m] != p) {
                    report.nesting_failures.push((k, cube.id));
                }
            }
        }
        let s = hier.scale(k);
        for cube in level.iter().filter(|_| k > 0) {
            if cube.diameter > hier.a1_hat * s * (1.0 + 1e-12) {
                report.diameter_failures.push((k, cube.id));
            }
            let r = hier.a0_hat * s;
            let z = &pts[cube.center];
            let mut intruder = false;
            all.scan(z.0[0], factor, |j| {
                if owner[j] != cube.id && metric.dist(z, &pts[j]) < r {
                    intruder = true;
                    return -1.0;
                }
                r
            });
            if intruder {
                report.ball_failures.push((k, cube.id));
            }
        }
        report.mean_members.push(n as f64 / level.len() as f64);
        prev_owner = Some(owner);
    }
    let (a0, a1) = level_constants(hier);
    report.a0_by_level = a0;
    report.a1_by_level = a1;
    let xs: Vec<f64> = (0..hier.levels.len()).map(|k| hier.scale(k).ln()).collect();
    let ys: Vec<f64> = report.mean_members.iter().map(|m| m.ln()).collect();
    report.cardinality_exponent = slope(&xs, &ys);
    report
}
