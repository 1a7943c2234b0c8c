//! Numerical toolkit for Carnot groups.
//!
//! Covers group arithmetic on graded nilpotent Lie algebras, homogeneous
//! quasi-norms and a convex norm, upper and lower bounds for the
//! Carnot-Carathéodory distance, dyadic cube hierarchies on sampled balls,
//! coarse differentiation functionals, Markov convexity and the experiment
//! harness behind the `carnot` binary.

pub mod cc;
pub mod cubes;
pub mod error;
pub mod experiments;
pub mod functionals;
pub mod lie;
pub mod maps;
pub mod markov;
pub mod norms;
pub mod optim;
pub mod sampling;

pub use error::{Error, Result};
pub use lie::{AlgebraSpec, GradedLieAlgebra, GroupElement, StructureEntry};
pub use norms::{ConvexNormParams, Metric, MetricChoice};
