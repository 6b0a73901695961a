//! Checks shared by the integration tests and the acceptance harness.
//!
//! Every check returns `Ok(detail)` or `Err(reason)` so the harness can print
//! one line per criterion and the test targets can assert on it.
#![allow(dead_code)]

pub mod fixtures;
pub mod formats;
pub mod gradients;
pub mod oracles;
pub mod structure;

pub type Check = Result<String, String>;

/// Maps any displayable error into a check failure.
pub fn fail<E: std::fmt::Display>(context: &str) -> impl Fn(E) -> String + '_ {
    move |e| format!("{context}: {e}")
}
