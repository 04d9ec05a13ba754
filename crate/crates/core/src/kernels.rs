//! Positive-definite covariance functions with trainable hyperparameters.
//!
//! Three families are provided:
//!
//! - `SquaredExponential`: `sigma^2 * exp(-||x - x'||^2 / (2 l^2))` with a
//!   single shared lengthscale.
//! - `ArcCosine` (orders 0 and 1): built on the weighted inner product
//!   `s(x, x') = wv * <x, x'> + bv` and the angle
//!   `theta = arccos(s(x,x') / sqrt(s(x,x) s(x',x')))`;
//!   order 0 is `sigma^2 (1 - theta/pi)`, order 1 is
//!   `sigma^2 sqrt(s(x,x) s(x',x')) (sin theta + (pi - theta) cos theta) / pi`.
//! - `Polynomial`: `sigma^2 (<x, x'> + c)^d` with the degree fixed at
//!   construction.
//!
//! All continuous hyperparameters live behind a softplus transform, so they
//! stay strictly positive, and are initialized to a constrained value of 1.
//! Kernel evaluation happens on a [`Tape`] and is differentiable with
//! respect to both the hyperparameters and the inputs.

use std::f64::consts::PI;

use crate::autodiff::{ParamId, ParamStore, Tape, Var};

/// Order of the arc-cosine kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArcCosineOrder {
    Zero,
    One,
}

/// Plain-data kernel description with initial hyperparameter values; turned
/// into a [`KernelSpec`] (and its parameters) at model-build time.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelConfig {
    SquaredExponential {
        variance: f64,
        lengthscale: f64,
    },
    ArcCosine {
        order: ArcCosineOrder,
        variance: f64,
        weight_variance: f64,
        bias_variance: f64,
    },
    Polynomial {
        degree: u32,
        offset: f64,
        variance: f64,
    },
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig::SquaredExponential {
            variance: 1.0,
            lengthscale: 1.0,
        }
    }
}

impl KernelConfig {
    pub fn arc_cosine_default() -> Self {
        KernelConfig::ArcCosine {
            order: ArcCosineOrder::Zero,
            variance: 1.0,
            weight_variance: 1.0,
            bias_variance: 1.0,
        }
    }

    pub fn polynomial_default() -> Self {
        KernelConfig::Polynomial {
            degree: 3,
            offset: 1.0,
            variance: 1.0,
        }
    }

    /// Registers the hyperparameters and returns the bound kernel.
    pub fn build(&self, store: &mut ParamStore) -> KernelSpec {
        use crate::numerics::Matrix;
        match *self {
            KernelConfig::SquaredExponential { variance, lengthscale } => {
                KernelSpec::SquaredExponential {
                    variance: store.add_positive("kernel.variance", &Matrix::scalar(variance)),
                    lengthscale: store
                        .add_positive("kernel.lengthscale", &Matrix::scalar(lengthscale)),
                }
            }
            KernelConfig::ArcCosine {
                order,
                variance,
                weight_variance,
                bias_variance,
            } => KernelSpec::ArcCosine {
                order,
                variance: store.add_positive("kernel.variance", &Matrix::scalar(variance)),
                weight_variance: store
                    .add_positive("kernel.weight_variance", &Matrix::scalar(weight_variance)),
                bias_variance: store
                    .add_positive("kernel.bias_variance", &Matrix::scalar(bias_variance)),
            },
            KernelConfig::Polynomial { degree, offset, variance } => {
                assert!(degree >= 1, "polynomial degree must be at least 1");
                KernelSpec::Polynomial {
                    degree,
                    offset: store.add_positive("kernel.offset", &Matrix::scalar(offset)),
                    variance: store.add_positive("kernel.variance", &Matrix::scalar(variance)),
                }
            }
        }
    }
}

/// A covariance function together with handles to its hyperparameters.
#[derive(Debug, Clone)]
pub enum KernelSpec {
    SquaredExponential {
        variance: ParamId,
        lengthscale: ParamId,
    },
    ArcCosine {
        order: ArcCosineOrder,
        variance: ParamId,
        weight_variance: ParamId,
        bias_variance: ParamId,
    },
    Polynomial {
        degree: u32,
        offset: ParamId,
        variance: ParamId,
    },
}

impl KernelSpec {
    pub fn squared_exponential(store: &mut ParamStore) -> Self {
        let one = crate::numerics::Matrix::scalar(1.0);
        KernelSpec::SquaredExponential {
            variance: store.add_positive("kernel.variance", &one),
            lengthscale: store.add_positive("kernel.lengthscale", &one),
        }
    }

    pub fn arc_cosine(store: &mut ParamStore, order: ArcCosineOrder) -> Self {
        let one = crate::numerics::Matrix::scalar(1.0);
        KernelSpec::ArcCosine {
            order,
            variance: store.add_positive("kernel.variance", &one),
            weight_variance: store.add_positive("kernel.weight_variance", &one),
            bias_variance: store.add_positive("kernel.bias_variance", &one),
        }
    }

    /// Polynomial kernel; defaults elsewhere use degree 3 with offset 1.
    pub fn polynomial(store: &mut ParamStore, degree: u32) -> Self {
        assert!(degree >= 1, "polynomial degree must be at least 1");
        let one = crate::numerics::Matrix::scalar(1.0);
        KernelSpec::Polynomial {
            degree,
            offset: store.add_positive("kernel.offset", &one),
            variance: store.add_positive("kernel.variance", &one),
        }
    }

    /// Handles to every trainable hyperparameter of this kernel.
    pub fn hyperparameter_ids(&self) -> Vec<ParamId> {
        match *self {
            KernelSpec::SquaredExponential { variance, lengthscale } => {
                vec![variance, lengthscale]
            }
            KernelSpec::ArcCosine {
                variance,
                weight_variance,
                bias_variance,
                ..
            } => vec![variance, weight_variance, bias_variance],
            KernelSpec::Polynomial { offset, variance, .. } => vec![offset, variance],
        }
    }

    /// `N x M` covariance matrix between the rows of `x` and `x2`.
    pub fn matrix(&self, t: &mut Tape, store: &ParamStore, x: Var, x2: Var) -> Var {
        assert_eq!(
            t.shape(x).1,
            t.shape(x2).1,
            "kernel inputs must share the feature dimension"
        );
        match *self {
            KernelSpec::SquaredExponential { variance, lengthscale } => {
                let d2 = squared_distances(t, x, x2);
                let ell = t.param(store, lengthscale);
                let ell2 = t.square(ell);
                let denom = t.scale(ell2, 2.0);
                let z = t.div(d2, denom);
                let nz = t.neg(z);
                let e = t.exp(nz);
                let v = t.param(store, variance);
                t.mul(v, e)
            }
            KernelSpec::ArcCosine {
                order,
                variance,
                weight_variance,
                bias_variance,
            } => {
                let wv = t.param(store, weight_variance);
                let bv = t.param(store, bias_variance);
                let s_cross = weighted_inner(t, x, x2, wv, bv); // N x M
                let s_x = weighted_self(t, x, wv, bv); // N x 1
                let s_x2 = weighted_self(t, x2, wv, bv); // M x 1
                let s_x2_row = t.transpose(s_x2); // 1 x M
                let prod = t.mul(s_x, s_x2_row); // N x M
                let denom = t.sqrt(prod);
                let ratio = t.div(s_cross, denom);
                let theta = t.arccos(ratio);
                let v = t.param(store, variance);
                match order {
                    ArcCosineOrder::Zero => {
                        let frac = t.scale(theta, 1.0 / PI);
                        let one = t.scalar(1.0);
                        let shape = t.sub(one, frac);
                        t.mul(v, shape)
                    }
                    ArcCosineOrder::One => {
                        let sin_t = t.sin(theta);
                        let cos_t = t.cos(theta);
                        let pi_minus = {
                            let pi_c = t.scalar(PI);
                            t.sub(pi_c, theta)
                        };
                        let second = t.mul(pi_minus, cos_t);
                        let angular = t.add(sin_t, second);
                        let scaled = t.mul(denom, angular);
                        let v_over_pi = t.scale(v, 1.0 / PI);
                        t.mul(v_over_pi, scaled)
                    }
                }
            }
            KernelSpec::Polynomial { degree, offset, variance } => {
                let x2t = t.transpose(x2);
                let cross = t.matmul(x, x2t);
                let c = t.param(store, offset);
                let base = t.add(cross, c);
                let powed = int_power(t, base, degree);
                let v = t.param(store, variance);
                t.mul(v, powed)
            }
        }
    }

    /// `N x 1` vector of `k(x_i, x_i)`, matching the diagonal of
    /// `matrix(x, x)`. Computed directly from the closed forms, which avoids
    /// the angle computation entirely on this path.
    pub fn diag(&self, t: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let n = t.shape(x).0;
        match *self {
            KernelSpec::SquaredExponential { variance, .. } => {
                let ones = t.constant(crate::numerics::Matrix::filled(n, 1, 1.0));
                let v = t.param(store, variance);
                t.mul(v, ones)
            }
            KernelSpec::ArcCosine {
                order,
                variance,
                weight_variance,
                bias_variance,
            } => {
                let wv = t.param(store, weight_variance);
                let bv = t.param(store, bias_variance);
                let s_x = weighted_self(t, x, wv, bv);
                let v = t.param(store, variance);
                match order {
                    // theta = 0 on the diagonal, so order 0 is constant sigma^2
                    ArcCosineOrder::Zero => {
                        let ones = t.constant(crate::numerics::Matrix::filled(n, 1, 1.0));
                        t.mul(v, ones)
                    }
                    // order 1 at theta = 0 collapses to sigma^2 * s(x, x)
                    ArcCosineOrder::One => t.mul(v, s_x),
                }
            }
            KernelSpec::Polynomial { degree, offset, variance } => {
                let sq = t.square(x);
                let rn = t.row_sums(sq);
                let c = t.param(store, offset);
                let base = t.add(rn, c);
                let powed = int_power(t, base, degree);
                let v = t.param(store, variance);
                t.mul(v, powed)
            }
        }
    }
}

/// Pairwise squared distances via the inner-product expansion
/// `||x||^2 + ||x'||^2 - 2 <x, x'>`, clamped at zero so rounding noise
/// cannot produce tiny negatives.
fn squared_distances(t: &mut Tape, x: Var, x2: Var) -> Var {
    let x2t = t.transpose(x2);
    let cross = t.matmul(x, x2t);
    let sq_x = t.square(x);
    let rn = t.row_sums(sq_x); // N x 1
    let sq_x2 = t.square(x2);
    let rn2 = t.row_sums(sq_x2); // M x 1
    let rn2_row = t.transpose(rn2); // 1 x M
    let sums = t.add(rn, rn2_row);
    let twice = t.scale(cross, 2.0);
    let d2 = t.sub(sums, twice);
    t.relu(d2)
}

/// `wv * x x2^T + bv`, the weighted inner product of the arc-cosine family.
fn weighted_inner(t: &mut Tape, x: Var, x2: Var, wv: Var, bv: Var) -> Var {
    let x2t = t.transpose(x2);
    let cross = t.matmul(x, x2t);
    let scaled = t.mul(wv, cross);
    t.add(scaled, bv)
}

/// Column of `wv * ||x_i||^2 + bv`.
fn weighted_self(t: &mut Tape, x: Var, wv: Var, bv: Var) -> Var {
    let sq = t.square(x);
    let rn = t.row_sums(sq);
    let scaled = t.mul(wv, rn);
    t.add(scaled, bv)
}

fn int_power(t: &mut Tape, base: Var, degree: u32) -> Var {
    let mut acc = base;
    for _ in 1..degree {
        acc = t.mul(acc, base);
    }
    acc
}
