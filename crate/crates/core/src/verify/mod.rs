//! Randomized correctness suites: fused-vs-naive slicing oracles and
//! finite-difference gradient checks.

pub mod gradcheck;
pub mod suites;

pub use gradcheck::{check_gradients, GradCheck, FD_EPS, FD_TOL};
pub use suites::{grad_suite, oracle_suite, CaseResult, SuiteReport, GRAD_OPS, ORACLE_TOL};
