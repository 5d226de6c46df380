//! Exit codes and the error type that carries one.

use std::fmt;

pub const OK: u8 = 0;
pub const VIOLATION: u8 = 1;
pub const INPUT: u8 = 2;
pub const PLANNER: u8 = 3;

#[derive(Debug)]
pub struct Fail {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Fail {
    pub fn input(msg: impl fmt::Display) -> Self {
        Fail {
            code: INPUT,
            error: anyhow::anyhow!("{msg}"),
        }
    }
}

pub trait Code<T> {
    fn code(self, code: u8) -> Result<T, Fail>;
}

impl<T, E: Into<anyhow::Error>> Code<T> for Result<T, E> {
    fn code(self, code: u8) -> Result<T, Fail> {
        self.map_err(|e| Fail { code, error: e.into() })
    }
}

/// Planner errors are exit 3, except a bad endpoint config file.
pub fn planner_code(e: &sitebt::planner::PlannerError) -> u8 {
    match e {
        sitebt::planner::PlannerError::Config(_) => INPUT,
        _ => PLANNER,
    }
}
