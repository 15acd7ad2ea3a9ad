//! Self-checks: finite-difference gradients, brute-force loss and metric
//! oracles, and comparison counts.

mod gradcheck;
pub mod oracle;
mod suites;

pub use gradcheck::{gradcheck, weighted_sum, FD_STEP};
pub use suites::{
    run_suite, run_suite_with, BatchHardFn, CheckResult, HeteroCenterFn, LossImpls, Suite, SuiteReport,
    GRAD_INSTANCES, GRAD_TOLERANCE, LOSS_BATCHES, METRIC_INSTANCES, ORACLE_TOLERANCE,
};
