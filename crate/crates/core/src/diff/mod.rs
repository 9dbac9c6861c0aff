//! Reverse-mode differentiation over dense `f64` arrays, with the custom
//! nodes the training chains need and a finite-difference checker.

mod check;
mod graph;
mod suite;

pub use check::{gradient_check, gradient_check_with, GradCheck, GRAD_FLOOR};
pub use graph::{Graph, NodeKind, Var, ALL_KINDS};
pub use suite::{run_suite, SuiteOptions, SuiteReport, SuiteRow, SUITE_NODES, SUITE_TOLERANCE};
