//! The functional probabilistic layer: a sparse variational Gaussian
//! process mapping hidden inputs to Gaussian output marginals.
//!
//! The layer places `M` trainable inducing points `Z` in its input space and
//! a free Gaussian `q(u) = N(m_u, S_uu)` over the function values at `Z`.
//! Conditioning the GP prior on `u` and integrating against `q(u)` gives the
//! layer's predictive marginals:
//!
//! - mean: `mu(X) + K_xu K_uu^{-1} (m_u - mu(Z))`
//! - variance: `k(x, x) - k_xu K_uu^{-1} (K_uu - S_uu) K_uu^{-1} k_ux`
//!
//! Both are computed through a jittered Cholesky factorization of `K_uu`
//! and are differentiable with respect to every layer parameter, the kernel
//! hyperparameters, and the layer input. The parameterization is
//! non-whitened: `m_u` and the Cholesky factor of `S_uu` are stored
//! directly, with the factor split into a strict lower triangle and a
//! softplus-positive diagonal so `S_uu` stays symmetric positive definite by
//! construction.
//!
//! Only per-point marginal variances are propagated between layers; full
//! cross-point predictive covariance is out of scope.

use crate::autodiff::{ParamId, ParamStore, Tape, Transform, Var};
use crate::error::Result;
use crate::kernels::KernelSpec;
use crate::numerics::{softplus_inverse, Matrix, RngState};

/// Floor applied to predicted marginal variances. Clips are counted in the
/// tape diagnostics.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Shrinkage applied to the prior Cholesky factor when initializing `S_uu`,
/// so the initial posterior is a tightened prior and the initial KL stays
/// small.
const INIT_FACTOR_SCALE: f64 = 0.1;

/// Prior mean function applied to the layer input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeanFunction {
    /// `mu(x) = 0`; the documented default.
    Zero,
    /// `mu(x) = x`, offered for deep stacks; requires the input width to
    /// equal the number of latent outputs.
    Identity,
}

/// Per-point Gaussian output of a stochastic layer: one mean and one
/// marginal variance per point and latent output.
#[derive(Debug, Clone)]
pub struct GaussianMarginals {
    pub mean: Matrix,
    pub variance: Matrix,
    /// How many variance entries were clipped up to [`VARIANCE_FLOOR`].
    pub clipped: u64,
}

/// Cholesky factor of one output's `S_uu`, stored as a strict lower
/// triangle plus a positive diagonal.
#[derive(Debug, Clone)]
pub struct VariationalFactor {
    pub strict_lower: ParamId,
    pub diag: ParamId,
}

/// Sparse variational GP layer state.
#[derive(Debug, Clone)]
pub struct GpLayer {
    pub kernel: KernelSpec,
    /// Inducing points `Z`, `M x D_in`.
    pub inducing: ParamId,
    /// Variational mean `m_u`, `M x P`.
    pub q_mean: ParamId,
    /// One covariance factor per latent output.
    pub q_factors: Vec<VariationalFactor>,
    pub mean_function: MeanFunction,
    pub num_inducing: usize,
    pub in_dim: usize,
    pub num_latent: usize,
}

impl GpLayer {
    /// Builds a layer with inducing points at `z_init` and the variational
    /// distribution initialized to a shrunk prior: `m_u = mu(Z)` and
    /// `L_S = 0.1 * chol(K_uu)`.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        kernel: KernelSpec,
        z_init: Matrix,
        num_latent: usize,
        mean_function: MeanFunction,
    ) -> Result<Self> {
        let m = z_init.rows();
        let d = z_init.cols();
        assert!(m >= 1, "at least one inducing point is required");
        assert!(num_latent >= 1);
        if mean_function == MeanFunction::Identity {
            assert_eq!(
                d, num_latent,
                "identity mean function needs input width == latent outputs"
            );
        }

        let inducing = store.add(format!("{name}.inducing"), z_init, Transform::Identity);
        let q_mean = store.add(
            format!("{name}.q_mean"),
            Matrix::zeros(m, num_latent),
            Transform::Identity,
        );
        let q_factors = (0..num_latent)
            .map(|p| VariationalFactor {
                strict_lower: store.add(
                    format!("{name}.q_factor{p}.strict_lower"),
                    Matrix::zeros(m, m),
                    Transform::Identity,
                ),
                diag: store.add(
                    format!("{name}.q_factor{p}.diag"),
                    Matrix::filled(m, 1, softplus_inverse(1.0)),
                    Transform::SoftplusPositive,
                ),
            })
            .collect();

        let layer = GpLayer {
            kernel,
            inducing,
            q_mean,
            q_factors,
            mean_function,
            num_inducing: m,
            in_dim: d,
            num_latent,
        };
        layer.set_variational_scaled_prior(store, INIT_FACTOR_SCALE)?;
        Ok(layer)
    }

    /// Sets `m_u = mu(Z)` and `L_S = scale * chol(K_uu + jitter I)` for every
    /// output. With `scale = 1` this makes the variational distribution equal
    /// the (jittered) prior exactly.
    pub fn set_variational_scaled_prior(&self, store: &mut ParamStore, scale: f64) -> Result<()> {
        let (l, _jitter) = {
            let mut t = Tape::new();
            let z = t.param(store, self.inducing);
            let kuu = self.kernel.matrix(&mut t, store, z, z);
            let (lv, j) = t.jittered_cholesky(kuu)?;
            (t.value(lv).clone(), j)
        };
        let m = self.num_inducing;

        let mu_z = self.prior_mean_at(store.value(self.inducing));
        store.set_value(self.q_mean, mu_z);

        let scaled = l.scale(scale);
        let mut strict = scaled.clone();
        let mut diag = Matrix::zeros(m, 1);
        for i in 0..m {
            diag.set(i, 0, softplus_inverse(scaled.get(i, i)));
            for j in i..m {
                strict.set(i, j, 0.0);
            }
        }
        for f in &self.q_factors {
            store.set_value(f.strict_lower, strict.clone());
            store.set_value(f.diag, diag.clone());
        }
        Ok(())
    }

    /// Sets the variational distribution exactly to the prior.
    pub fn set_variational_to_prior(&self, store: &mut ParamStore) -> Result<()> {
        self.set_variational_scaled_prior(store, 1.0)
    }

    fn prior_mean_at(&self, x: &Matrix) -> Matrix {
        match self.mean_function {
            MeanFunction::Zero => Matrix::zeros(x.rows(), self.num_latent),
            MeanFunction::Identity => x.clone(),
        }
    }

    fn prior_mean_var(&self, t: &mut Tape, x: Var) -> Var {
        match self.mean_function {
            MeanFunction::Zero => {
                let n = t.shape(x).0;
                t.constant(Matrix::zeros(n, self.num_latent))
            }
            MeanFunction::Identity => x,
        }
    }

    /// Assembles the lower-triangular factor of output `p`'s `S_uu` on the
    /// tape.
    fn factor_on_tape(&self, t: &mut Tape, store: &ParamStore, p: usize) -> Var {
        let f = &self.q_factors[p];
        let raw = t.param(store, f.strict_lower);
        let strict = t.tril_strict(raw);
        let d = t.param(store, f.diag);
        let dm = t.diag_embed(d);
        t.add(strict, dm)
    }

    /// Predictive marginals on the tape: `(mean N x P, variance N x P)`,
    /// differentiable with respect to all parameters and the input.
    pub fn marginals_on_tape(
        &self,
        t: &mut Tape,
        store: &ParamStore,
        x: Var,
    ) -> Result<(Var, Var)> {
        assert_eq!(
            t.shape(x).1,
            self.in_dim,
            "GP layer expects width {}, got {}",
            self.in_dim,
            t.shape(x).1
        );
        let z = t.param(store, self.inducing);
        let kuu = self.kernel.matrix(t, store, z, z);
        let (l, _jitter) = t.jittered_cholesky(kuu)?;
        let kuf = self.kernel.matrix(t, store, z, x); // M x N

        // A = L^{-1} K_uf, so A^T A = K_fu K~^{-1} K_uf.
        let a = t.solve_lower(l, kuf);

        let mu_x = self.prior_mean_var(t, x); // N x P
        let mu_z = self.prior_mean_var(t, z); // M x P
        let m_u = t.param(store, self.q_mean);
        let dm = t.sub(m_u, mu_z);
        let b = t.solve_lower(l, dm); // M x P
        let at = t.transpose(a);
        let correction = t.matmul(at, b);
        let mean = t.add(mu_x, correction);

        // Common variance reduction: colsum(A . A) per point.
        let kdiag = self.kernel.diag(t, store, x); // N x 1
        let a2 = t.square(a);
        let a2sum = t.col_sums(a2); // 1 x N
        let a2col = t.transpose(a2sum); // N x 1
        let base = t.sub(kdiag, a2col); // N x 1

        // V = K~^{-1} K_uf; the S_uu contribution per output is
        // colsum((L_S^T V) . (L_S^T V)).
        let v = t.solve_upper(l, a);
        let mut var_cols = Vec::with_capacity(self.num_latent);
        for p in 0..self.num_latent {
            let ls = self.factor_on_tape(t, store, p);
            let lst = t.transpose(ls);
            let c = t.matmul(lst, v); // M x N
            let c2 = t.square(c);
            let c2sum = t.col_sums(c2); // 1 x N
            let c2col = t.transpose(c2sum); // N x 1
            let raw = t.add(base, c2col);
            var_cols.push(t.floor_at(raw, VARIANCE_FLOOR));
        }
        let variance = t.concat_cols(&var_cols);
        Ok((mean, variance))
    }

    /// Reparameterized sample `mean + sqrt(var) . eps` on the tape;
    /// gradients flow through the moments, not through `eps`.
    pub fn sample_on_tape(
        &self,
        t: &mut Tape,
        store: &ParamStore,
        x: Var,
        rng: &mut RngState,
    ) -> Result<Var> {
        let (mean, variance) = self.marginals_on_tape(t, store, x)?;
        let (n, p) = t.shape(mean);
        let eps = t.constant(rng.sample_standard_normal(n, p));
        let std = t.sqrt(variance);
        let noise = t.mul(std, eps);
        Ok(t.add(mean, noise))
    }

    /// Sum over outputs of the analytic
    /// `KL(N(m_u, S_uu) || N(mu(Z), K_uu))` on the tape.
    pub fn kl_on_tape(&self, t: &mut Tape, store: &ParamStore) -> Result<Var> {
        let z = t.param(store, self.inducing);
        let kuu = self.kernel.matrix(t, store, z, z);
        let (l, _jitter) = t.jittered_cholesky(kuu)?;
        let m = self.num_inducing as f64;
        let p_count = self.num_latent as f64;

        // Mean term: || L^{-1} (mu(Z) - m_u) ||_F^2 sums the quadratic forms
        // over all outputs at once.
        let mu_z = self.prior_mean_var(t, z);
        let m_u = t.param(store, self.q_mean);
        let dm = t.sub(mu_z, m_u);
        let alpha = t.solve_lower(l, dm);
        let alpha2 = t.square(alpha);
        let quad = t.reduce_sum(alpha2);

        let log_det_k = t.log_det_from_chol(l);

        let mut total = quad;
        for p in 0..self.num_latent {
            // trace term: || L^{-1} L_S ||_F^2 = tr(K~^{-1} S)
            let ls = self.factor_on_tape(t, store, p);
            let w = t.solve_lower(l, ls);
            let w2 = t.square(w);
            let tr = t.reduce_sum(w2);
            total = t.add(total, tr);

            // ln det S = 2 sum(ln diag)
            let d = t.param(store, self.q_factors[p].diag);
            let logd = t.log(d);
            let sum_logd = t.reduce_sum(logd);
            let log_det_s = t.scale(sum_logd, 2.0);
            total = t.sub(total, log_det_s);
        }
        let k_terms = t.scale(log_det_k, p_count);
        total = t.add(total, k_terms);
        total = t.shift(total, -m * p_count);
        Ok(t.scale(total, 0.5))
    }

    /// Predictive marginals at fixed parameter values.
    pub fn predict_marginals(&self, store: &ParamStore, x: &Matrix) -> Result<GaussianMarginals> {
        let mut t = Tape::new();
        let vx = t.constant(x.clone());
        let (mean, variance) = self.marginals_on_tape(&mut t, store, vx)?;
        Ok(GaussianMarginals {
            mean: t.value(mean).clone(),
            variance: t.value(variance).clone(),
            clipped: t.diagnostics.variance_clips,
        })
    }

    /// Reparameterized sample at fixed parameter values.
    pub fn sample(&self, store: &ParamStore, x: &Matrix, rng: &mut RngState) -> Result<Matrix> {
        let mut t = Tape::new();
        let vx = t.constant(x.clone());
        let s = self.sample_on_tape(&mut t, store, vx, rng)?;
        Ok(t.value(s).clone())
    }

    /// Sum over outputs of the analytic KL to the prior, as a plain number.
    pub fn kl_to_prior(&self, store: &ParamStore) -> Result<f64> {
        let mut t = Tape::new();
        let kl = self.kl_on_tape(&mut t, store)?;
        Ok(t.value(kl).scalar_value())
    }

    /// Conditional process given fixed inducing values `u` (`M x P`):
    /// mean `mu(X) + K_xu K_uu^{-1} (u - mu(Z))` and marginal variance
    /// `k(x, x) - k_xu K_uu^{-1} k_ux`, which is independent of `u`.
    pub fn conditional_given_u(
        &self,
        store: &ParamStore,
        x: &Matrix,
        u: &Matrix,
    ) -> Result<GaussianMarginals> {
        assert_eq!(u.shape(), (self.num_inducing, self.num_latent));
        let mut t = Tape::new();
        let vx = t.constant(x.clone());
        let z = t.param(store, self.inducing);
        let kuu = self.kernel.matrix(&mut t, store, z, z);
        let (l, _jitter) = t.jittered_cholesky(kuu)?;
        let kuf = self.kernel.matrix(&mut t, store, z, vx);
        let a = t.solve_lower(l, kuf);

        let mu_x = self.prior_mean_var(&mut t, vx);
        let mu_z = self.prior_mean_var(&mut t, z);
        let vu = t.constant(u.clone());
        let du = t.sub(vu, mu_z);
        let b = t.solve_lower(l, du);
        let at = t.transpose(a);
        let corr = t.matmul(at, b);
        let mean = t.add(mu_x, corr);

        let kdiag = self.kernel.diag(&mut t, store, vx);
        let a2 = t.square(a);
        let a2sum = t.col_sums(a2);
        let a2col = t.transpose(a2sum);
        let base = t.sub(kdiag, a2col);
        let floored = t.floor_at(base, 0.0);

        let var_col = t.value(floored).clone();
        let mut variance = Matrix::zeros(x.rows(), self.num_latent);
        for i in 0..x.rows() {
            for p in 0..self.num_latent {
                variance.set(i, p, var_col.get(i, 0));
            }
        }
        Ok(GaussianMarginals {
            mean: t.value(mean).clone(),
            variance,
            clipped: t.diagnostics.variance_clips,
        })
    }

    /// Every trainable parameter of the layer, kernel hyperparameters
    /// included.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.inducing, self.q_mean];
        for f in &self.q_factors {
            ids.push(f.strict_lower);
            ids.push(f.diag);
        }
        ids.extend(self.kernel.hyperparameter_ids());
        ids
    }

    /// The variational parameters only: `Z`, `m_u`, and the `S_uu` factors.
    pub fn variational_param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.inducing, self.q_mean];
        for f in &self.q_factors {
            ids.push(f.strict_lower);
            ids.push(f.diag);
        }
        ids
    }
}

/// Evenly spaced grid of `m` points covering `[lo, hi]`, replicated across
/// `dim` input columns.
pub fn even_grid(lo: f64, hi: f64, m: usize, dim: usize) -> Matrix {
    assert!(m >= 1);
    let mut out = Matrix::zeros(m, dim);
    for i in 0..m {
        let x = if m == 1 {
            0.5 * (lo + hi)
        } else {
            lo + (hi - lo) * i as f64 / (m - 1) as f64
        };
        for j in 0..dim {
            out.set(i, j, x);
        }
    }
    out
}
