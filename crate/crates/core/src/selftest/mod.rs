//! Invariant and oracle checks that can run outside `cargo test`.
//!
//! Each check compares an implementation against an independent oracle
//! (finite differences, exhaustive enumeration, brute-force recomputation,
//! or a hand-derived value) and reports a named pass/fail outcome. The CLI's
//! `selftest` command and the acceptance tests both run these.

mod checks;
mod gradients;

pub use checks::{
    cardinality_check, cost_model_check, equation_checks, evolution_checks, format_checks, micro_space,
    slice_equivalence_check,
};
pub use gradients::{end_to_end_gradient_check, op_gradient_suite};

/// Every check, cheapest first.
pub fn run_all() -> Vec<CheckOutcome> {
    let mut out = vec![cardinality_check(), cost_model_check(), slice_equivalence_check()];
    out.extend(op_gradient_suite());
    out.push(end_to_end_gradient_check());
    out.extend([equation_checks(), evolution_checks(), format_checks()]);
    out
}

/// One named pass/fail result.
#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

impl std::fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {}: {}", self.name, self.detail)
    }
}
