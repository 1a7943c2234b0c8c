//! Graded nilpotent Lie algebras and group arithmetic in exponential coordinates.
//!
//! Group elements are identified with algebra vectors through the exponential
//! map. The product is the Baker-Campbell-Hausdorff series, truncated at the
//! nilpotency step; since brackets of depth above the step vanish the
//! truncation is exact.

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

const AXIOM_TOL: f64 = 1e-12;

/// A point of the group, in exponential coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupElement(pub Vec<f64>);

impl GroupElement {
    pub fn new(coords: Vec<f64>) -> Self {
        GroupElement(coords)
    }

    pub fn identity(dim: usize) -> Self {
        GroupElement(vec![0.0; dim])
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// One nonzero structure constant: `[e_i, e_j]` has `value` along `e_k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureEntry {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub value: f64,
}

// A node of the suffix trie of right-nested bracket words.
// `letter` is 0 for U and 1 for V; `child` is the nested suffix.
#[derive(Clone, Debug)]
struct WordNode {
    letter: u8,
    child: Option<usize>,
    coeff: f64,
}

/// Serialized form of an algebra: layer dimensions and nonzero structure entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgebraSpec {
    #[serde(default = "custom_name")]
    pub name: String,
    pub layer_dims: Vec<usize>,
    pub entries: Vec<StructureEntry>,
}

fn custom_name() -> String {
    "custom".into()
}

/// A stratified nilpotent Lie algebra with a fixed basis adapted to the grading.
#[derive(Clone, Debug)]
pub struct GradedLieAlgebra {
    name: String,
    layer_dims: Vec<usize>,
    layer_of: Vec<usize>,
    offsets: Vec<usize>,
    entries: Vec<StructureEntry>,
    table: Vec<Vec<(usize, f64)>>,
    words: Vec<WordNode>,
}

impl GradedLieAlgebra {
    /// Builds an algebra from raw structure constants, taken exactly as given.
    ///
    /// Only shape is checked here; the Lie axioms are checked by [`validate`](Self::validate).
    pub fn from_structure(
        name: impl Into<String>,
        layer_dims: &[usize],
        entries: &[StructureEntry],
    ) -> Result<Self> {
        if layer_dims.is_empty() || layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidParameter(
                "layer dimensions must be nonempty and positive".into(),
            ));
        }
        let dim: usize = layer_dims.iter().sum();
        let mut layer_of = Vec::with_capacity(dim);
        let mut offsets = Vec::with_capacity(layer_dims.len() + 1);
        let mut off = 0;
        for (l, &d) in layer_dims.iter().enumerate() {
            offsets.push(off);
            layer_of.extend(std::iter::repeat_n(l + 1, d));
            off += d;
        }
        offsets.push(off);

        let mut table = vec![Vec::new(); dim * dim];
        let mut kept = Vec::new();
        for e in entries {
            if e.i >= dim || e.j >= dim || e.k >= dim {
                return Err(Error::InvalidParameter(format!(
                    "structure index ({}, {}, {}) out of range for dimension {dim}",
                    e.i, e.j, e.k
                )));
            }
            if !e.value.is_finite() {
                return Err(Error::InvalidParameter("structure constant is not finite".into()));
            }
            if e.value == 0.0 {
                continue;
            }
            let slot: &mut Vec<(usize, f64)> = &mut table[e.i * dim + e.j];
            match slot.iter_mut().find(|(k, _)| *k == e.k) {
                Some((_, v)) => *v += e.value,
                None => slot.push((e.k, e.value)),
            }
            kept.push(*e);
        }

        let step = layer_dims.len();
        Ok(GradedLieAlgebra {
            name: name.into(),
            layer_dims: layer_dims.to_vec(),
            layer_of,
            offsets,
            entries: kept,
            table,
            words: bch_words(step),
        })
    }

    /// Builds an algebra from brackets `[e_i, e_j] = value e_k`, filling in the
    /// antisymmetric partner of every entry.
    pub fn from_brackets(
        name: impl Into<String>,
        layer_dims: &[usize],
        brackets: &[StructureEntry],
    ) -> Result<Self> {
        let mut all = Vec::with_capacity(2 * brackets.len());
        for b in brackets {
            all.push(*b);
            all.push(StructureEntry { i: b.j, j: b.i, k: b.k, value: -b.value });
        }
        Self::from_structure(name, layer_dims, &all)
    }

    /// The abelian algebra ℝⁿ, step 1.
    pub fn abelian(n: usize) -> Result<Self> {
        Self::from_brackets(format!("R{n}"), &[n], &[])
    }

    /// The Heisenberg algebra of dimension `2n + 1`.
    ///
    /// Basis order is `X_1, Y_1, ..., X_n, Y_n, Z` with `[X_i, Y_i] = Z`.
    pub fn heisenberg(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("Heisenberg rank must be positive".into()));
        }
        let z = 2 * n;
        let brackets: Vec<_> = (0..n)
            .map(|i| StructureEntry { i: 2 * i, j: 2 * i + 1, k: z, value: 1.0 })
            .collect();
        Self::from_brackets(format!("H{n}"), &[2 * n, 1], &brackets)
    }

    /// The Engel algebra: `[X1, X2] = X3`, `[X1, X3] = X4`.
    pub fn engel() -> Result<Self> {
        Self::from_brackets(
            "Engel",
            &[2, 1, 1],
            &[
                StructureEntry { i: 0, j: 1, k: 2, value: 1.0 },
                StructureEntry { i: 0, j: 2, k: 3, value: 1.0 },
            ],
        )
    }

    pub fn from_spec(spec: &AlgebraSpec) -> Result<Self> {
        Self::from_structure(spec.name.clone(), &spec.layer_dims, &spec.entries)
    }

    /// Parses an [`AlgebraSpec`] from JSON.
    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_spec(&serde_json::from_str(text)?)
    }

    pub fn to_spec(&self) -> AlgebraSpec {
        AlgebraSpec { name: self.name.clone(), layer_dims: self.layer_dims.clone(), entries: self.entries.clone() }
    }

    /// Looks up a built-in algebra by name (`R<n>`, `H1`, `H2`, `Engel`).
    pub fn builtin(name: &str) -> Result<Self> {
        let lower = name.to_ascii_lowercase();
        match lower.as_str() {
            "h1" | "heisenberg" => Self::heisenberg(1),
            "h2" => Self::heisenberg(2),
            "engel" => Self::engel(),
            _ => {
                if let Some(n) = lower.strip_prefix('r').and_then(|s| s.parse::<usize>().ok()) {
                    if n > 0 {
                        return Self::abelian(n);
                    }
                }
                Err(Error::InvalidParameter(format!("unknown algebra `{name}`")))
            }
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.layer_of.len()
    }

    /// Nilpotency step, i.e. the number of layers.
    pub fn step(&self) -> usize {
        self.layer_dims.len()
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    /// Dimension of the horizontal layer.
    pub fn horizontal_dim(&self) -> usize {
        self.layer_dims[0]
    }

    /// Layer (1-based) of each basis vector.
    pub fn layer_of(&self, idx: usize) -> usize {
        self.layer_of[idx]
    }

    /// Coordinate range of layer `k` (1-based).
    pub fn layer_range(&self, k: usize) -> std::ops::Range<usize> {
        self.offsets[k - 1]..self.offsets[k]
    }

    pub fn entries(&self) -> &[StructureEntry] {
        &self.entries
    }

    /// Homogeneous dimension `Σ k dim V_k`.
    pub fn homogeneous_dim(&self) -> usize {
        self.layer_dims.iter().enumerate().map(|(k, d)| (k + 1) * d).sum()
    }

    /// The bracket of two algebra vectors.
    pub fn bracket(&self, u: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), u.len())?;
        check_dim(self.dim(), v.len())?;
        let mut out = vec![0.0; self.dim()];
        self.bracket_into(u, v, &mut out);
        Ok(out)
    }

    fn bracket_into(&self, u: &[f64], v: &[f64], out: &mut [f64]) {
        let n = self.dim();
        out.iter_mut().for_each(|x| *x = 0.0);
        for (i, &ui) in u.iter().enumerate() {
            if ui == 0.0 {
                continue;
            }
            for (j, &vj) in v.iter().enumerate() {
                if vj == 0.0 {
                    continue;
                }
                for &(k, c) in &self.table[i * n + j] {
                    out[k] += c * ui * vj;
                }
            }
        }
    }

    /// Group product `g·h` via the truncated BCH series.
    pub fn multiply(&self, g: &GroupElement, h: &GroupElement) -> Result<GroupElement> {
        check_dim(self.dim(), g.dim())?;
        check_dim(self.dim(), h.dim())?;
        Ok(GroupElement(self.bch(&g.0, &h.0)))
    }

    pub(crate) fn bch(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        self.bch_signed(u, 1.0, v)
    }

    // BCH product of exp(su·u) and exp(v).
    pub(crate) fn bch_signed(&self, u: &[f64], su: f64, v: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut out: Vec<f64> = u.iter().zip(v).map(|(a, b)| su * a + b).collect();
        if self.words.is_empty() || self.entries.is_empty() {
            return out;
        }
        // Block 0 holds su·u, block 1 holds v, then one block per trie node.
        // Words are stored so that every child precedes its parent.
        let mut buf = vec![0.0; (self.words.len() + 2) * n];
        for (b, x) in buf[..n].iter_mut().zip(u) {
            *b = su * x;
        }
        buf[n..2 * n].copy_from_slice(v);
        for (idx, w) in self.words.iter().enumerate() {
            let slot = (idx + 2) * n;
            let (done, rest) = buf.split_at_mut(slot);
            let out_slot = &mut rest[..n];
            let letter = &done[w.letter as usize * n..(w.letter as usize + 1) * n];
            match w.child {
                None => out_slot.copy_from_slice(letter),
                Some(c) => {
                    let child = &done[(c + 2) * n..(c + 3) * n];
                    self.bracket_into(letter, child, out_slot);
                    if w.coeff != 0.0 {
                        for (o, x) in out.iter_mut().zip(out_slot.iter()) {
                            *o += w.coeff * x;
                        }
                    }
                }
            }
        }
        out
    }

    /// Group inverse, which in exponential coordinates is negation.
    pub fn inverse(&self, g: &GroupElement) -> GroupElement {
        GroupElement(g.0.iter().map(|x| -x).collect())
    }

    /// `g⁻¹h`.
    pub fn relative(&self, g: &GroupElement, h: &GroupElement) -> Result<GroupElement> {
        check_dim(self.dim(), g.dim())?;
        check_dim(self.dim(), h.dim())?;
        Ok(GroupElement(self.bch_signed(&g.0, -1.0, &h.0)))
    }

    /// Dilation `δ_λ`, scaling layer `k` by `λ^k`.
    pub fn dilate(&self, lambda: f64, g: &GroupElement) -> GroupElement {
        GroupElement(
            g.0.iter()
                .zip(&self.layer_of)
                .map(|(x, &k)| x * lambda.powi(k as i32))
                .collect(),
        )
    }

    /// Projection onto the horizontal layer.
    pub fn horizontal_project(&self, g: &GroupElement) -> Vec<f64> {
        g.0[..self.horizontal_dim()].to_vec()
    }

    /// The element with the same horizontal part and vanishing upper layers.
    pub fn horizontal_lift(&self, g: &GroupElement) -> GroupElement {
        let mut c = vec![0.0; self.dim()];
        c[..self.horizontal_dim()].copy_from_slice(&g.0[..self.horizontal_dim()]);
        GroupElement(c)
    }

    /// `exp` of a horizontal vector.
    pub fn exp_horizontal(&self, v: &[f64]) -> Result<GroupElement> {
        check_dim(self.horizontal_dim(), v.len())?;
        let mut c = vec![0.0; self.dim()];
        c[..v.len()].copy_from_slice(v);
        Ok(GroupElement(c))
    }

    /// `g · exp(t v)` for horizontal `v`.
    pub fn flow(&self, g: &GroupElement, v: &[f64], t: f64) -> GroupElement {
        let mut c = vec![0.0; self.dim()];
        for (ci, vi) in c.iter_mut().zip(v) {
            *ci = t * vi;
        }
        GroupElement(self.bch(&g.0, &c))
    }

    /// Checks antisymmetry, grading, the Jacobi identity and stratification.
    pub fn validate(&self) -> ValidationReport {
        let n = self.dim();
        let coeff = |i: usize, j: usize, k: usize| -> f64 {
            self.table[i * n + j]
                .iter()
                .find(|(kk, _)| *kk == k)
                .map_or(0.0, |(_, c)| *c)
        };

        let mut antisymmetry = Vec::new();
        let mut grading = Vec::new();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let c = coeff(i, j, k);
                    if i <= j && (c + coeff(j, i, k)).abs() > AXIOM_TOL {
                        antisymmetry.push((i, j, k));
                    }
                    if c.abs() > AXIOM_TOL && self.layer_of[k] != self.layer_of[i] + self.layer_of[j] {
                        grading.push((i, j, k));
                    }
                }
            }
        }

        let mut jacobi = Vec::new();
        let basis = |i: usize| {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            e
        };
        let mut t1 = vec![0.0; n];
        let mut t2 = vec![0.0; n];
        for i in 0..n {
            for j in i..n {
                for k in j..n {
                    let (ei, ej, ek) = (basis(i), basis(j), basis(k));
                    let mut sum = vec![0.0; n];
                    for (a, b, c) in [(&ei, &ej, &ek), (&ej, &ek, &ei), (&ek, &ei, &ej)] {
                        self.bracket_into(b, c, &mut t1);
                        self.bracket_into(a, &t1, &mut t2);
                        for (s, x) in sum.iter_mut().zip(&t2) {
                            *s += x;
                        }
                    }
                    if sum.iter().any(|x| x.abs() > AXIOM_TOL) {
                        jacobi.push((i, j, k));
                    }
                }
            }
        }

        // Iterated brackets of the first layer must span each higher layer.
        let mut stratification = Vec::new();
        let h = self.horizontal_dim();
        let mut current: Vec<Vec<f64>> = (0..h).map(basis).collect();
        for k in 2..=self.step() {
            let mut next = Vec::new();
            for a in 0..h {
                for w in &current {
                    let mut out = vec![0.0; n];
                    self.bracket_into(&basis(a), w, &mut out);
                    next.push(out);
                }
            }
            let range = self.layer_range(k);
            let rank = if next.is_empty() {
                0
            } else {
                let m = DMatrix::from_fn(range.len(), next.len(), |r, c| next[c][range.start + r]);
                m.rank(1e-10)
            };
            if rank < self.layer_dims[k - 1] {
                stratification.push(k);
            }
            current = orthonormal_basis(next);
        }

        ValidationReport { antisymmetry, grading, jacobi, stratification }
    }
}

/// Outcome of [`GradedLieAlgebra::validate`]. Index triples are 0-based basis indices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub antisymmetry: Vec<(usize, usize, usize)>,
    pub grading: Vec<(usize, usize, usize)>,
    pub jacobi: Vec<(usize, usize, usize)>,
    /// Layers (1-based) not spanned by brackets with the first layer.
    pub stratification: Vec<usize>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.antisymmetry.is_empty()
            && self.grading.is_empty()
            && self.jacobi.is_empty()
            && self.stratification.is_empty()
    }
}

fn orthonormal_basis(vecs: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for mut v in vecs {
        for b in &out {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-10 {
            v.iter_mut().for_each(|x| *x /= norm);
            out.push(v);
        }
    }
    out
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|x| x as f64).product()
}

// Dynkin's form of the BCH series. Each tuple (r_1, s_1, ..., r_k, s_k) with
// r_i + s_i > 0 contributes the right-nested bracket of the word
// U^{r_1} V^{s_1} ... U^{r_k} V^{s_k}; words are merged and stored as a suffix trie.
fn bch_words(depth: usize) -> Vec<WordNode> {
    let mut coeffs: HashMap<Vec<u8>, f64> = HashMap::new();

    fn pairs(
        remaining: usize,
        acc: &mut Vec<(usize, usize)>,
        coeffs: &mut HashMap<Vec<u8>, f64>,
    ) {
        if !acc.is_empty() {
            let k = acc.len();
            let total: usize = acc.iter().map(|(r, s)| r + s).sum();
            let denom: f64 = acc.iter().map(|&(r, s)| factorial(r) * factorial(s)).product();
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            let c = sign / (k as f64) / (total as f64) / denom;
            let mut word = Vec::with_capacity(total);
            for &(r, s) in acc.iter() {
                word.extend(std::iter::repeat_n(0u8, r));
                word.extend(std::iter::repeat_n(1u8, s));
            }
            *coeffs.entry(word).or_insert(0.0) += c;
        }
        for r in 0..=remaining {
            for s in 0..=(remaining - r) {
                if r + s == 0 {
                    continue;
                }
                acc.push((r, s));
                pairs(remaining - r - s, acc, coeffs);
                acc.pop();
            }
        }
    }
    pairs(depth, &mut Vec::new(), &mut coeffs);

    // Single letters are handled by the linear term U + V.
    let mut nodes: Vec<WordNode> = Vec::new();
    let mut index: HashMap<Vec<u8>, usize> = HashMap::new();
    let mut words: Vec<(Vec<u8>, f64)> = coeffs
        .into_iter()
        .filter(|(w, c)| w.len() >= 2 && c.abs() > 1e-15 && w[w.len() - 1] != w[w.len() - 2])
        .collect();
    words.sort_by(|a, b| a.0.len().cmp(&b.0.len()).then(a.0.cmp(&b.0)));
    for (w, c) in words {
        let mut child = None;
        for start in (0..w.len()).rev() {
            let suffix = w[start..].to_vec();
            let id = match index.get(&suffix) {
                Some(&id) => id,
                None => {
                    nodes.push(WordNode { letter: suffix[0], child, coeff: 0.0 });
                    index.insert(suffix, nodes.len() - 1);
                    nodes.len() - 1
                }
            };
            child = Some(id);
        }
        let id = child.expect("word is nonempty");
        nodes[id].coeff += c;
    }
    nodes
}
