//! Compass (pattern) search with shrinking steps.
//!
//! The iteration is fully deterministic, so running with a larger evaluation
//! budget only extends the trajectory of a smaller one.

/// State of a compass search minimizing some objective.
#[derive(Clone, Debug)]
pub struct PatternSearch {
    pub x: Vec<f64>,
    pub fx: f64,
    pub step: f64,
    pub min_step: f64,
    pub shrink: f64,
    pub evals: usize,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
}

impl PatternSearch {
    pub fn new(x0: Vec<f64>, f: &mut impl FnMut(&[f64]) -> f64, step: f64, min_step: f64) -> Self {
        let fx = f(&x0);
        PatternSearch { x: x0, fx, step, min_step, shrink: 0.5, evals: 1, lower: None, upper: None }
    }

    pub fn with_bounds(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        self.lower = Some(lower);
        self.upper = Some(upper);
        self
    }

    pub fn converged(&self) -> bool {
        self.step < self.min_step
    }

    fn clamp(&self, i: usize, v: f64) -> f64 {
        let mut v = v;
        if let Some(lo) = &self.lower {
            v = v.max(lo[i]);
        }
        if let Some(hi) = &self.upper {
            v = v.min(hi[i]);
        }
        v
    }

    /// One sweep over all coordinates, accepting improvements greedily.
    /// Shrinks the step when nothing improves. Returns the evaluations used.
    pub fn sweep(&mut self, f: &mut impl FnMut(&[f64]) -> f64, max_evals: usize) -> usize {
        let start = self.evals;
        let mut improved = false;
        let mut trial = self.x.clone();
        for i in 0..self.x.len() {
            for dir in [1.0, -1.0] {
                if self.evals - start >= max_evals {
                    return self.evals - start;
                }
                let v = self.clamp(i, self.x[i] + dir * self.step);
                if v == self.x[i] {
                    continue;
                }
                trial[i] = v;
                let ft = f(&trial);
                self.evals += 1;
                if ft < self.fx {
                    self.x[i] = v;
                    self.fx = ft;
                    improved = true;
                    break;
                }
                trial[i] = self.x[i];
            }
        }
        if !improved {
            self.step *= self.shrink;
        }
        self.evals - start
    }

    /// Runs sweeps until convergence or until `max_evals` evaluations are spent.
    pub fn run(&mut self, f: &mut impl FnMut(&[f64]) -> f64, max_evals: usize) {
        let mut used = 0;
        while !self.converged() && used < max_evals {
            used += self.sweep(f, max_evals - used);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_a_quadratic() {
        let mut f = |x: &[f64]| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 2.0).powi(2);
        let mut ps = PatternSearch::new(vec![0.0, 0.0], &mut f, 1.0, 1e-9);
        ps.run(&mut f, 100_000);
        assert!((ps.x[0] - 1.0).abs() < 1e-8 && (ps.x[1] + 2.0).abs() < 1e-8);
    }

    #[test]
    fn respects_bounds() {
        let mut f = |x: &[f64]| x[0];
        let mut ps = PatternSearch::new(vec![0.5], &mut f, 0.3, 1e-6).with_bounds(vec![0.0], vec![1.0]);
        ps.run(&mut f, 1000);
        assert_eq!(ps.x[0], 0.0);
    }
}
