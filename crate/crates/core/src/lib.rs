//! Frequency sensing with a continuously monitored Kerr parametric oscillator
//! in the Gaussian limit.
//!
//! The crate covers the whole pipeline: simulating conditional moments and
//! photocurrents ([`sde`]), filtering them with a positivity-preserving
//! extended Kalman filter ([`ekf`]), Fisher-information growth rates and
//! optimal homodyne phases ([`fisher`]), ensemble estimation with skew-normal
//! peak fits ([`estimator`]), and the adaptive criticality-seeking protocol
//! ([`protocol`]).

#[cfg(test)]
macro_rules! assert_close {
    ($a:expr, $b:expr, $tol:expr) => {{
        let (a, b): (f64, f64) = ($a, $b);
        assert!((a - b).abs() <= $tol, "{a} vs {b} (tol {})", $tol);
    }};
}

pub mod dynamics;
pub mod ekf;
pub mod error;
pub mod estimator;
pub mod fisher;
pub mod model;
pub mod optimize;
pub mod protocol;
pub mod sde;

pub use dynamics::{GaussianState, OscillatorParams, PriorInterval};
pub use error::{Error, Result};
