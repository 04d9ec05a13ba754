//! Dense linear algebra and seeded sampling underlying every other module.
//!
//! Everything is double precision. Operations are pure functions of their
//! inputs except for [`RngState`] advancement; values may be shared
//! read-only across threads.

mod factor;
mod matrix;
mod rng;

pub use factor::{
    cholesky, jittered_cholesky, log_det_from_chol, solve_lower, solve_lower_transpose,
    solve_spd, solve_upper, LowerTriangular, JITTER_SCHEDULE, SYMMETRY_TOL,
};
pub(crate) use factor::cholesky_lower_unchecked;
pub use matrix::Matrix;
pub use rng::RngState;

/// Numerically safe `softplus(x) = ln(1 + e^x)`.
///
/// For `x > 30` the result is `x` to machine precision; for `x < -30` it is
/// `e^x`. Both branches avoid overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Derivative of softplus, the logistic sigmoid.
pub fn softplus_grad(x: f64) -> f64 {
    if x > 30.0 {
        1.0
    } else if x < -30.0 {
        x.exp()
    } else {
        1.0 / (1.0 + (-x).exp())
    }
}

/// Inverse of [`softplus`] on positive inputs.
pub fn softplus_inverse(y: f64) -> f64 {
    assert!(y > 0.0, "softplus_inverse needs a positive argument");
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}
