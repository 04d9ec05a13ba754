//! Independent reference implementations used by the tests and by the
//! `gradcheck` command: exact Gaussian-process regression, Monte-Carlo KL
//! estimates, Gauss-Hermite quadrature, and finite-difference gradients.
//!
//! Nothing here shares a code path with the main implementation beyond the
//! `numerics` module; the duplicated formulas are the point, since these
//! routines exist to catch mistakes in the primary ones.

pub mod gradcheck;

use std::f64::consts::PI;

use crate::autodiff::{ParamId, ParamStore};
use crate::error::Result;
use crate::kernels::{ArcCosineOrder, KernelSpec};
use crate::numerics::{cholesky, solve_lower, solve_spd, Matrix, RngState};

/// Posterior of exact conjugate GP regression plus the log marginal
/// likelihood of the data.
#[derive(Debug, Clone)]
pub struct ExactGpResult {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub log_marginal_likelihood: f64,
}

/// Direct evaluation of one kernel entry from the hyperparameter values.
/// Intentionally separate from the tape-based kernel code.
fn kernel_entry(spec: &KernelSpec, store: &ParamStore, a: &[f64], b: &[f64]) -> f64 {
    match *spec {
        KernelSpec::SquaredExponential { variance, lengthscale } => {
            let v = store.constrained(variance).scalar_value();
            let l = store.constrained(lengthscale).scalar_value();
            let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            v * (-d2 / (2.0 * l * l)).exp()
        }
        KernelSpec::ArcCosine {
            order,
            variance,
            weight_variance,
            bias_variance,
        } => {
            let v = store.constrained(variance).scalar_value();
            let wv = store.constrained(weight_variance).scalar_value();
            let bv = store.constrained(bias_variance).scalar_value();
            let dot = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).sum::<f64>();
            let s_ab = wv * dot(a, b) + bv;
            let s_aa = wv * dot(a, a) + bv;
            let s_bb = wv * dot(b, b) + bv;
            let theta = (s_ab / (s_aa * s_bb).sqrt()).clamp(-1.0, 1.0).acos();
            match order {
                ArcCosineOrder::Zero => v * (1.0 - theta / PI),
                ArcCosineOrder::One => {
                    v * (s_aa * s_bb).sqrt() * (theta.sin() + (PI - theta) * theta.cos()) / PI
                }
            }
        }
        KernelSpec::Polynomial { degree, offset, variance } => {
            let v = store.constrained(variance).scalar_value();
            let c = store.constrained(offset).scalar_value();
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            v * (dot + c).powi(degree as i32)
        }
    }
}

fn kernel_gram(spec: &KernelSpec, store: &ParamStore, x: &Matrix, x2: &Matrix) -> Matrix {
    let mut k = Matrix::zeros(x.rows(), x2.rows());
    for i in 0..x.rows() {
        for j in 0..x2.rows() {
            k.set(i, j, kernel_entry(spec, store, x.row(i), x2.row(j)));
        }
    }
    k
}

/// Closed-form conjugate GP regression with a zero prior mean:
///
/// - posterior mean `K_*x (K_xx + s2 I)^{-1} y`
/// - posterior variance `k(x*, x*) - k_*x (K_xx + s2 I)^{-1} k_x*`
/// - log marginal likelihood
///   `-1/2 y^T (K_xx + s2 I)^{-1} y - 1/2 ln det(K_xx + s2 I) - N/2 ln 2 pi`
///
/// Everything goes through one Cholesky factorization of `K_xx + s2 I`.
pub fn exact_gp_regression(
    spec: &KernelSpec,
    store: &ParamStore,
    x: &Matrix,
    y: &[f64],
    noise_variance: f64,
    x_star: &Matrix,
) -> Result<ExactGpResult> {
    assert!(noise_variance > 0.0, "noise variance must be positive");
    assert_eq!(x.rows(), y.len(), "inputs and targets must align");
    let n = x.rows();

    let kxx = kernel_gram(spec, store, x, x).add_diagonal(noise_variance);
    let l = cholesky(&kxx)?;

    let yv = Matrix::column(y);
    let alpha = solve_spd(&l, &yv)?; // (K + s2 I)^{-1} y

    let lml = {
        let quad: f64 = y.iter().zip(alpha.data()).map(|(yi, ai)| yi * ai).sum();
        -0.5 * quad - 0.5 * l.log_det() - (n as f64 / 2.0) * (2.0 * PI).ln()
    };

    let k_star = kernel_gram(spec, store, x, x_star); // N x N*
    let mean_m = k_star.transpose().matmul(&alpha);
    let mean: Vec<f64> = (0..x_star.rows()).map(|i| mean_m.get(i, 0)).collect();

    // var_i = k(x*_i, x*_i) - || L^{-1} k_{x, x*_i} ||^2
    let w = solve_lower(&l, &k_star)?;
    let variance: Vec<f64> = (0..x_star.rows())
        .map(|i| {
            let prior = kernel_entry(spec, store, x_star.row(i), x_star.row(i));
            let reduction: f64 = (0..n).map(|r| w.get(r, i) * w.get(r, i)).sum();
            (prior - reduction).max(0.0)
        })
        .collect();

    Ok(ExactGpResult {
        mean,
        variance,
        log_marginal_likelihood: lml,
    })
}

/// Monte-Carlo estimate of `KL(q || p) = E_q[ln q - ln p]`.
///
/// Returns the sample mean and its standard error over `n_samples` draws
/// from `q`.
pub fn mc_kl(
    mut sampler_q: impl FnMut(&mut RngState) -> Vec<f64>,
    logpdf_q: impl Fn(&[f64]) -> f64,
    logpdf_p: impl Fn(&[f64]) -> f64,
    n_samples: usize,
    rng: &mut RngState,
) -> (f64, f64) {
    assert!(n_samples >= 1_000, "too few samples for a stable estimate");
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n_samples {
        let z = sampler_q(rng);
        let v = logpdf_q(&z) - logpdf_p(&z);
        sum += v;
        sum_sq += v * v;
    }
    let n = n_samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    (mean, (var / n).sqrt())
}

/// Log density of a multivariate Gaussian given the Cholesky factor of its
/// covariance. Helper for building `mc_kl` arguments in tests.
pub fn mvn_logpdf(x: &[f64], mean: &[f64], cov: &Matrix) -> f64 {
    let l = cholesky(cov).expect("covariance must be SPD");
    let d = Matrix::column(
        &x.iter().zip(mean).map(|(a, b)| a - b).collect::<Vec<_>>(),
    );
    let w = solve_lower(&l, &d).expect("conforming shapes");
    let quad: f64 = w.data().iter().map(|v| v * v).sum();
    -0.5 * quad - 0.5 * l.log_det() - (x.len() as f64 / 2.0) * (2.0 * PI).ln()
}

/// Draws from `N(mean, L L^T)` given the Cholesky factor `L`.
pub fn mvn_sample(mean: &[f64], chol: &Matrix, rng: &mut RngState) -> Vec<f64> {
    let n = mean.len();
    let eps = rng.sample_standard_normal(n, 1);
    let shifted = chol.matmul(&eps);
    (0..n).map(|i| mean[i] + shifted.get(i, 0)).collect()
}

/// `E[f(t)]` for `t ~ N(mean, variance)` by 20-node Gauss-Hermite
/// quadrature. Exact for polynomial integrands up to degree 39, which
/// covers the quadratic log-density integrands this project checks.
pub fn gauss_hermite_expectation(
    f: impl Fn(f64) -> f64,
    mean: f64,
    variance: f64,
    nodes: usize,
) -> f64 {
    assert!(variance >= 0.0, "variance must be nonnegative");
    let (xs, ws) = gauss_hermite_nodes(nodes);
    let scale = (2.0 * variance).sqrt();
    let mut acc = 0.0;
    for (x, w) in xs.iter().zip(&ws) {
        acc += w * f(mean + scale * x);
    }
    acc / PI.sqrt()
}

/// Nodes and weights for the physicists' Gauss-Hermite rule (weight
/// `exp(-t^2)`), by Newton iteration on the recurrence-evaluated Hermite
/// polynomial. Standard construction; see Numerical Recipes' `gauher`.
pub fn gauss_hermite_nodes(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    // Positive roots in discovery order (largest first); the asymptotic
    // guesses below extrapolate from them.
    let mut roots: Vec<f64> = Vec::with_capacity(n.div_ceil(2));
    let mut z = 0.0f64;
    for i in 0..n.div_ceil(2) {
        // Initial guesses from Stroud & Secrest asymptotics.
        z = match i {
            0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * roots[0],
            3 => 1.91 * z - 0.91 * roots[1],
            _ => 2.0 * z - roots[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            // Evaluate H~_n (orthonormal scaling) and its derivative at z.
            let mut p1 = PI.powf(-0.25);
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        roots.push(z);
        xs[i] = -z;
        xs[n - 1 - i] = z;
        let w = 2.0 / (pp * pp);
        ws[i] = w;
        ws[n - 1 - i] = w;
    }
    (xs, ws)
}

/// Central finite differences of `loss` with respect to the unconstrained
/// entries of the listed parameters. `loss` is re-evaluated at each
/// perturbation, so it must be a pure function of the store.
pub fn finite_diff_grad(
    store: &mut ParamStore,
    ids: &[ParamId],
    step: f64,
    mut loss: impl FnMut(&ParamStore) -> f64,
) -> Vec<Matrix> {
    let mut grads = Vec::with_capacity(ids.len());
    for &id in ids {
        let (rows, cols) = store.value(id).shape();
        let mut g = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                let base = store.entry(id, i, j);
                store.set_entry(id, i, j, base + step);
                let up = loss(store);
                store.set_entry(id, i, j, base - step);
                let down = loss(store);
                store.set_entry(id, i, j, base);
                g.set(i, j, (up - down) / (2.0 * step));
            }
        }
        grads.push(g);
    }
    grads
}
