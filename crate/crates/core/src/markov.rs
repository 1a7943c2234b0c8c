//! Markov convexity: forked chain simulation, the convexity functional and
//! the four-point inequality behind Markov convexity of Carnot groups.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lie::{GradedLieAlgebra, GroupElement};
use crate::norms::Metric;
use crate::sampling::{rng_for, SeededRng};

/// A time-homogeneous Markov chain started at time 0.
pub trait MarkovChain {
    type State: Clone;

    fn initial(&self, rng: &mut SeededRng) -> Self::State;

    fn step(&self, state: &Self::State, rng: &mut SeededRng) -> Self::State;

    /// Path `X_0, …, X_horizon`.
    fn path(&self, horizon: usize, rng: &mut SeededRng) -> Vec<Self::State> {
        let mut out = Vec::with_capacity(horizon + 1);
        out.push(self.initial(rng));
        for t in 0..horizon {
            let next = self.step(&out[t], rng);
            out.push(next);
        }
        out
    }
}

/// A chain on `{0, …, states−1}` given by a row-stochastic matrix.
#[derive(Clone, Debug, Serialize)]
pub struct MarkovChainSpec {
    pub transition: Vec<Vec<f64>>,
    pub initial: Vec<f64>,
    pub horizon: usize,
    #[serde(skip)]
    rows: Vec<Vec<(usize, f64)>>,
    #[serde(skip)]
    init_cdf: Vec<(usize, f64)>,
}

fn cdf(row: &[f64]) -> Vec<(usize, f64)> {
    let mut acc = 0.0;
    row.iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(j, &p)| {
            acc += p;
            (j, acc)
        })
        .collect()
}

fn draw(cdf: &[(usize, f64)], rng: &mut SeededRng) -> usize {
    let total = cdf.last().map_or(1.0, |c| c.1);
    let u = rng.random::<f64>() * total;
    cdf.iter().find(|c| u < c.1).unwrap_or(cdf.last().expect("nonempty row")).0
}

impl MarkovChainSpec {
    pub fn new(transition: Vec<Vec<f64>>, initial: Vec<f64>, horizon: usize) -> Result<Self> {
        let n = transition.len();
        if n == 0 || initial.len() != n {
            return Err(Error::InvalidParameter("initial distribution must match the state count".into()));
        }
        for (i, row) in transition.iter().enumerate() {
            let s: f64 = row.iter().sum();
            if row.len() != n || (s - 1.0).abs() > 1e-12 || row.iter().any(|&p| p < 0.0) {
                return Err(Error::InvalidParameter(format!("row {i} is not a probability vector")));
            }
        }
        if (initial.iter().sum::<f64>() - 1.0).abs() > 1e-12 || initial.iter().any(|&p| p < 0.0) {
            return Err(Error::InvalidParameter("initial distribution must sum to 1".into()));
        }
        let rows = transition.iter().map(|r| cdf(r)).collect();
        let init_cdf = cdf(&initial);
        Ok(MarkovChainSpec { transition, initial, horizon, rows, init_cdf })
    }

    pub fn states(&self) -> usize {
        self.transition.len()
    }

    /// Simple random walk on `{0, …, n−1}` started in the middle; at an
    /// endpoint the blocked move becomes a hold.
    pub fn path_walk(n: usize, horizon: usize) -> Result<Self> {
        let mut t = vec![vec![0.0; n]; n];
        for (i, row) in t.iter_mut().enumerate() {
            row[i.saturating_sub(1)] += 0.5;
            row[(i + 1).min(n - 1)] += 0.5;
        }
        let mut init = vec![0.0; n];
        init[n / 2] = 1.0;
        Self::new(t, init, horizon)
    }

    /// Walk from the root of the complete binary tree of the given depth to a
    /// uniformly random child at each step; leaves are absorbing. Nodes use
    /// heap numbering.
    pub fn binary_tree_walk(depth: usize) -> Result<Self> {
        let n = (1usize << (depth + 1)) - 1;
        let mut t = vec![vec![0.0; n]; n];
        for (i, row) in t.iter_mut().enumerate() {
            if 2 * i + 2 < n {
                row[2 * i + 1] = 0.5;
                row[2 * i + 2] = 0.5;
            } else {
                row[i] = 1.0;
            }
        }
        let mut init = vec![0.0; n];
        init[0] = 1.0;
        Self::new(t, init, depth)
    }
}

impl MarkovChain for MarkovChainSpec {
    type State = usize;

    fn initial(&self, rng: &mut SeededRng) -> usize {
        draw(&self.init_cdf, rng)
    }

    fn step(&self, state: &usize, rng: &mut SeededRng) -> usize {
        draw(&self.rows[*state], rng)
    }
}

/// Shortest-path metric of the complete binary tree in heap numbering.
pub fn tree_distance(mut a: usize, mut b: usize) -> f64 {
    let depth = |i: usize| (usize::BITS - 1 - (i + 1).leading_zeros()) as usize;
    let mut d = 0;
    while depth(a) > depth(b) {
        a = (a - 1) / 2;
        d += 1;
    }
    while depth(b) > depth(a) {
        b = (b - 1) / 2;
        d += 1;
    }
    while a != b {
        a = (a - 1) / 2;
        b = (b - 1) / 2;
        d += 2;
    }
    d as f64
}

/// Lazy walk on the integer Heisenberg group: with probability ½ stay, else
/// multiply on the right by one of `±X, ±Y`.
#[derive(Clone, Debug)]
pub struct HeisenbergWalk {
    alg: GradedLieAlgebra,
}

impl HeisenbergWalk {
    pub fn new() -> Result<Self> {
        Ok(HeisenbergWalk { alg: GradedLieAlgebra::heisenberg(1)? })
    }

    pub fn algebra(&self) -> &GradedLieAlgebra {
        &self.alg
    }
}

impl MarkovChain for HeisenbergWalk {
    type State = GroupElement;

    fn initial(&self, _rng: &mut SeededRng) -> GroupElement {
        GroupElement::identity(3)
    }

    fn step(&self, g: &GroupElement, rng: &mut SeededRng) -> GroupElement {
        let u: f64 = rng.random();
        if u < 0.5 {
            return g.clone();
        }
        let gen = match ((u - 0.5) * 8.0) as usize {
            0 => [1.0, 0.0],
            1 => [-1.0, 0.0],
            2 => [0.0, 1.0],
            _ => [0.0, -1.0],
        };
        self.alg.flow(g, &gen, 1.0)
    }
}

/// The process that follows `path` up to time `k` and then evolves independently.
pub fn fork<C: MarkovChain>(chain: &C, path: &[C::State], k: usize, rng: &mut SeededRng) -> Vec<C::State> {
    let mut out: Vec<C::State> = path[..=k.min(path.len() - 1)].to_vec();
    while out.len() < path.len() {
        let next = chain.step(out.last().expect("nonempty"), rng);
        out.push(next);
    }
    out
}

/// Monte Carlo estimates of both sides of the Markov convexity inequality.
#[derive(Clone, Debug, Serialize)]
pub struct MarkovReport {
    /// `Σ_k Σ_t E[d(f(X_t), f(X̃_t(t−2^k)))^p] / 2^{kp}`.
    pub lhs: f64,
    /// `Σ_t E[d(f(X_{t−1}), f(X_t))^p]`.
    pub rhs: f64,
    pub trials: usize,
    pub seed: u64,
}

impl MarkovReport {
    /// `lhs/rhs`, or 0 when the chain never moves.
    pub fn ratio(&self) -> f64 {
        if self.rhs > 0.0 {
            self.lhs / self.rhs
        } else {
            0.0
        }
    }

    /// The implied lower bound `(lhs/rhs)^{1/p}` for the convexity constant.
    pub fn pi(&self, p: f64) -> f64 {
        self.ratio().powf(1.0 / p)
    }
}

/// Simulates the functional on `0..=horizon`. Fork times are restricted to
/// `t − 2^k ≥ 0` and `k` runs while `2^k ≤ horizon`. `dist` is the pulled-back
/// metric `d(f(a), f(b))`.
pub fn markov_functional<C: MarkovChain>(
    chain: &C,
    horizon: usize,
    dist: impl Fn(&C::State, &C::State) -> f64,
    p: f64,
    trials: usize,
    seed: u64,
) -> Result<MarkovReport> {
    if !(p >= 1.0) {
        return Err(Error::InvalidParameter(format!("p must be at least 1, got {p}")));
    }
    let (mut lhs, mut rhs) = (0.0, 0.0);
    for trial in 0..trials {
        let mut rng = rng_for(seed, trial as u64);
        let path = chain.path(horizon, &mut rng);
        for t in 1..=horizon {
            rhs += dist(&path[t - 1], &path[t]).powf(p);
        }
        let mut k = 0u32;
        while (1usize << k) <= horizon {
            let lag = 1usize << k;
            let scale = 2f64.powf(k as f64 * p);
            for t in lag..=horizon {
                let mut s = path[t - lag].clone();
                for _ in 0..lag {
                    s = chain.step(&s, &mut rng);
                }
                lhs += dist(&path[t], &s).powf(p) / scale;
            }
            k += 1;
        }
    }
    let n = trials.max(1) as f64;
    Ok(MarkovReport { lhs: lhs / n, rhs: rhs / n, trials, seed })
}

/// Largest `(lhs/rhs)^{1/p}` over a family of reports.
pub fn estimate_pi(reports: &[MarkovReport], p: f64) -> f64 {
    reports.iter().map(|r| r.pi(p)).fold(0.0, f64::max)
}

/// Smallest `C ≥ 1` with
/// `(d_xw^P + d_xz^P)/2^{P−1} + d_zw^P/C^P ≤ d_yw^P + d_zy^P + 2 d_yx^P`,
/// `+∞` when no `C` works.
pub fn four_point_min_c_from_distances(dxw: f64, dxz: f64, dzw: f64, dyw: f64, dzy: f64, dyx: f64, exponent: f64) -> f64 {
    let q = exponent;
    let first = (dxw.powf(q) + dxz.powf(q)) / 2f64.powf(q - 1.0);
    let rhs = dyw.powf(q) + dzy.powf(q) + 2.0 * dyx.powf(q);
    let room = rhs - first;
    let slack = 1e-12 * rhs.abs().max(first.abs());
    if dzw == 0.0 {
        return if room >= -slack { 1.0 } else { f64::INFINITY };
    }
    if room <= 0.0 {
        return f64::INFINITY;
    }
    let c = dzw / room.powf(1.0 / q);
    if dzw.powf(q) <= room + slack {
        1.0
    } else {
        c.max(1.0)
    }
}

/// The four-point constant for points of a Carnot group, with exponent `p·s!`.
pub fn four_point_min_c(metric: &Metric, x: &GroupElement, y: &GroupElement, z: &GroupElement, w: &GroupElement, p: f64, s: usize) -> f64 {
    let exponent = p * (1..=s).product::<usize>() as f64;
    let d = |a: &GroupElement, b: &GroupElement| metric.dist(a, b);
    four_point_min_c_from_distances(d(x, w), d(x, z), d(z, w), d(y, w), d(z, y), d(y, x), exponent)
}
