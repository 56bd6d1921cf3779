//! Fixtures, independent oracles and the larger suites shared by the
//! integration tests and the acceptance runner.
#![allow(dead_code)]

pub mod delegation_suite;
pub mod fixtures;
pub mod log_suite;
pub mod oracle;
pub mod service_suite;
pub mod signals_suite;

/// Outcome of one suite: `Ok(summary)` or `Err(first violation)`.
pub type SuiteResult = Result<String, String>;

/// `Err` with a formatted message unless `cond` holds.
#[macro_export]
macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}
