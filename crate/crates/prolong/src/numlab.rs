//! Numerical cross-checks.

use crate::error::{Error, Result};
use crate::papercases::{CaseFile, CaseOutcome};

pub fn run_case(case: &CaseFile) -> Result<CaseOutcome> {
    Err(Error::Case(format!("{}: numcheck not implemented yet", case.id)))
}

pub fn run_zero_test_case(case: &CaseFile) -> Result<CaseOutcome> {
    Err(Error::Case(format!("{}: zero-test not implemented yet", case.id)))
}
