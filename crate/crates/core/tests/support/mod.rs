//! Checks shared by the integration tests and the acceptance harness. Each
//! check returns `Err` with a description of the first mismatch.
#![allow(dead_code)]

pub mod bm25_oracle;
pub mod composer_algebra;
pub mod goldens;
pub mod loss;
pub mod metrics;
pub mod ranking;
pub mod synth_trace;

pub type Check = Result<(), String>;
pub type NamedCheck = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if let false = $cond {
            return Err(format!($($fmt)+));
        }
    };
}
pub(crate) use ensure;
