#[cfg(test)]
macro_rules! assert_close {
    ($a:expr, $b:expr, $tol:expr) => {{
        let (a, b): (f64, f64) = ($a, $b);
        assert!((a - b).abs() <= $tol, "{} vs {} (tol {:e})", a, b, $tol);
    }};
}

pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod harness;
pub mod kernel;
pub mod learner;
pub mod model;
pub mod oracle;
pub mod rng;

pub use error::{Error, Result};
