//! Dense layers, weight-uncertain variational dense layers, and Gaussian
//! output heads / likelihoods.

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::numerics::{Matrix, RngState};

/// Floor added to the head's softplus scale so the emitted standard
/// deviation stays away from zero.
pub const HEAD_STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
}

/// Deterministic affine layer `act(H W^T + b)` with `W: D_out x D_in`.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl DenseLayer {
    /// He-style fan-in initialization for the weights; biases start at zero.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut RngState,
    ) -> Self {
        let std = (2.0 / in_dim as f64).sqrt();
        let w = rng.sample_standard_normal(out_dim, in_dim).scale(std);
        let weight = store.add(format!("{name}.weight"), w, crate::autodiff::Transform::Identity);
        let bias = store.add(
            format!("{name}.bias"),
            Matrix::zeros(1, out_dim),
            crate::autodiff::Transform::Identity,
        );
        DenseLayer {
            weight,
            bias,
            activation,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, t: &mut Tape, store: &ParamStore, h: Var) -> Var {
        assert_eq!(
            t.shape(h).1,
            self.in_dim,
            "dense layer expects width {}, got {}",
            self.in_dim,
            t.shape(h).1
        );
        let w = t.param(store, self.weight);
        let wt = t.transpose(w);
        let lin = t.matmul(h, wt);
        let b = t.param(store, self.bias);
        let pre = t.add(lin, b);
        match self.activation {
            Activation::Relu => t.relu(pre),
            Activation::Linear => pre,
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.weight, self.bias]
    }
}

/// Dense layer with a fully factorized Gaussian posterior over weights and
/// biases and a standard normal prior on every entry.
///
/// Scales are stored unconstrained and pass through softplus, so posterior
/// standard deviations are strictly positive. One weight sample is drawn per
/// forward call via the reparameterization `W = mean + std * eps`.
#[derive(Debug, Clone)]
pub struct VariationalDenseLayer {
    pub w_mean: ParamId,
    pub w_scale: ParamId,
    pub b_mean: ParamId,
    pub b_scale: ParamId,
    pub activation: Activation,
    /// Multiplier applied to this layer's KL term by the loss, conventionally
    /// `1 / N_train`.
    pub kl_weight: f64,
    pub in_dim: usize,
    pub out_dim: usize,
}

/// Initial posterior standard deviation for variational weights.
const INITIAL_POSTERIOR_STD: f64 = 0.01;

impl VariationalDenseLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        kl_weight: f64,
        rng: &mut RngState,
    ) -> Self {
        assert!(kl_weight > 0.0, "kl_weight must be positive");
        let std = (2.0 / in_dim as f64).sqrt();
        let w0 = rng.sample_standard_normal(out_dim, in_dim).scale(std);
        let w_mean = store.add(
            format!("{name}.w_mean"),
            w0,
            crate::autodiff::Transform::Identity,
        );
        let w_scale = store.add_positive(
            format!("{name}.w_scale"),
            &Matrix::filled(out_dim, in_dim, INITIAL_POSTERIOR_STD),
        );
        let b_mean = store.add(
            format!("{name}.b_mean"),
            Matrix::zeros(1, out_dim),
            crate::autodiff::Transform::Identity,
        );
        let b_scale = store.add_positive(
            format!("{name}.b_scale"),
            &Matrix::filled(1, out_dim, INITIAL_POSTERIOR_STD),
        );
        VariationalDenseLayer {
            w_mean,
            w_scale,
            b_mean,
            b_scale,
            activation,
            kl_weight,
            in_dim,
            out_dim,
        }
    }

    /// Samples one weight/bias configuration and applies the affine map.
    pub fn forward_sample(&self, t: &mut Tape, store: &ParamStore, h: Var, rng: &mut RngState) -> Var {
        let eps_w = rng.sample_standard_normal(self.out_dim, self.in_dim);
        let eps_b = rng.sample_standard_normal(1, self.out_dim);
        self.forward_with_eps(t, store, h, &eps_w, &eps_b)
    }

    /// Propagates the posterior mean weights (no sampling).
    pub fn forward_mean(&self, t: &mut Tape, store: &ParamStore, h: Var) -> Var {
        let zero_w = Matrix::zeros(self.out_dim, self.in_dim);
        let zero_b = Matrix::zeros(1, self.out_dim);
        self.forward_with_eps(t, store, h, &zero_w, &zero_b)
    }

    fn forward_with_eps(
        &self,
        t: &mut Tape,
        store: &ParamStore,
        h: Var,
        eps_w: &Matrix,
        eps_b: &Matrix,
    ) -> Var {
        assert_eq!(t.shape(h).1, self.in_dim, "variational dense width mismatch");
        let w_mean = t.param(store, self.w_mean);
        let w_std = t.param(store, self.w_scale);
        let ew = t.constant(eps_w.clone());
        let w_noise = t.mul(w_std, ew);
        let w = t.add(w_mean, w_noise);

        let b_mean = t.param(store, self.b_mean);
        let b_std = t.param(store, self.b_scale);
        let eb = t.constant(eps_b.clone());
        let b_noise = t.mul(b_std, eb);
        let b = t.add(b_mean, b_noise);

        let wt = t.transpose(w);
        let lin = t.matmul(h, wt);
        let pre = t.add(lin, b);
        match self.activation {
            Activation::Relu => t.relu(pre),
            Activation::Linear => pre,
        }
    }

    /// Sum over all weight and bias entries of
    /// `KL(N(mu, sigma^2) || N(0, 1)) = (sigma^2 + mu^2 - 1 - ln sigma^2)/2`.
    ///
    /// Returned unweighted; the loss applies `kl_weight`.
    pub fn kl(&self, t: &mut Tape, store: &ParamStore) -> Var {
        let kl_w = gaussian_kl_to_standard(t, store, self.w_mean, self.w_scale);
        let kl_b = gaussian_kl_to_standard(t, store, self.b_mean, self.b_scale);
        t.add(kl_w, kl_b)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.w_mean, self.w_scale, self.b_mean, self.b_scale]
    }
}

fn gaussian_kl_to_standard(t: &mut Tape, store: &ParamStore, mean: ParamId, scale: ParamId) -> Var {
    let mu = t.param(store, mean);
    let std = t.param(store, scale);
    let var = t.square(std);
    let mu2 = t.square(mu);
    let sum = t.add(var, mu2);
    let m1 = t.shift(sum, -1.0);
    let log_std = t.log(std);
    let log_var = t.scale(log_std, 2.0);
    let inner = t.sub(m1, log_var);
    let half = t.scale(inner, 0.5);
    t.reduce_sum(half)
}

/// Parameter-free head that reads a 2-column input as
/// `[mean, raw_scale]` with `std = softplus(raw_scale) + 1e-6`.
#[derive(Debug, Clone, Copy, Default)]
pub struct GaussianHead;

impl GaussianHead {
    /// Splits the raw 2-column output into `(mean, std)` columns.
    pub fn decode(&self, t: &mut Tape, raw: Var) -> (Var, Var) {
        assert_eq!(t.shape(raw).1, 2, "Gaussian head expects exactly 2 columns");
        let sel_mean = t.constant(Matrix::from_rows(&[vec![1.0], vec![0.0]]));
        let sel_scale = t.constant(Matrix::from_rows(&[vec![0.0], vec![1.0]]));
        let mean = t.matmul(raw, sel_mean);
        let raw_scale = t.matmul(raw, sel_scale);
        let sp = t.softplus(raw_scale);
        let std = t.shift(sp, HEAD_STD_FLOOR);
        (mean, std)
    }

    /// Mean over rows of `-ln N(y_i; mu_i, sigma_i^2)`.
    pub fn negative_loglik(&self, t: &mut Tape, raw: Var, y: &Matrix) -> Var {
        assert_eq!(t.shape(raw).0, y.rows(), "head/target row mismatch");
        let (mean, std) = self.decode(t, raw);
        let yv = t.constant(y.clone());
        let resid = t.sub(yv, mean);
        let r2 = t.square(resid);
        let var = t.square(std);
        let two_var = t.scale(var, 2.0);
        let quad = t.div(r2, two_var);
        let log_std = t.log(std);
        let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        let with_norm = t.shift(log_std, half_ln_2pi);
        let nll = t.add(with_norm, quad);
        t.reduce_mean(nll)
    }
}

/// Gaussian observation likelihood with a trainable positive noise variance.
#[derive(Debug, Clone)]
pub struct GaussianLikelihood {
    pub noise_variance: ParamId,
}

impl GaussianLikelihood {
    /// Conventional small initial noise variance.
    pub const DEFAULT_NOISE_VARIANCE: f64 = 0.001;

    pub fn new(store: &mut ParamStore, initial_variance: f64) -> Self {
        assert!(initial_variance > 0.0);
        GaussianLikelihood {
            noise_variance: store
                .add_positive("likelihood.noise_variance", &Matrix::scalar(initial_variance)),
        }
    }

    pub fn noise_variance_value(&self, store: &ParamStore) -> f64 {
        store.constrained(self.noise_variance).scalar_value()
    }

    /// Closed-form expected log density
    /// `sum_n [ -ln(2 pi s2)/2 - ((y_n - m_n)^2 + v_n) / (2 s2) ]`
    /// of the targets under Gaussian marginals `(m, v)`, the integral of the
    /// log-likelihood against the predictive marginal at each point.
    pub fn variational_expectation(
        &self,
        t: &mut Tape,
        store: &ParamStore,
        mean: Var,
        variance: Var,
        y: &Matrix,
    ) -> Var {
        let (n, p) = t.shape(mean);
        assert_eq!(p, 1, "Gaussian likelihood expects a single output column");
        assert_eq!(t.shape(variance), (n, 1), "marginal shape mismatch");
        assert_eq!(y.shape(), (n, 1), "target shape mismatch");

        let s2 = t.param(store, self.noise_variance);
        let yv = t.constant(y.clone());
        let resid = t.sub(yv, mean);
        let r2 = t.square(resid);
        let num = t.add(r2, variance);
        let two_s2 = t.scale(s2, 2.0);
        let quad = t.div(num, two_s2);

        let log_s2 = t.log(s2);
        let ln_2pi = t.scalar((2.0 * std::f64::consts::PI).ln());
        let norm = t.add(log_s2, ln_2pi);
        let half_norm = t.scale(norm, 0.5);

        let per_point = t.add(quad, half_norm);
        let total = t.reduce_sum(per_point);
        t.neg(total)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.noise_variance]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::softplus_inverse;
    use std::f64::consts::PI;

    fn run_dense(layer: &DenseLayer, store: &ParamStore, h: &Matrix) -> Matrix {
        let mut t = Tape::new();
        let vh = t.constant(h.clone());
        let out = layer.forward(&mut t, store, vh);
        t.value(out).clone()
    }

    #[test]
    fn dense_identity_passthrough() {
        let mut store = ParamStore::new();
        let mut rng = RngState::new(1);
        let mut layer = DenseLayer::new(&mut store, "d", 3, 3, Activation::Linear, &mut rng);
        store.set_value(layer.weight, Matrix::identity(3));
        store.set_value(layer.bias, Matrix::zeros(1, 3));
        layer.activation = Activation::Linear;
        let h = Matrix::from_rows(&[vec![1.0, -2.0, 0.5], vec![0.0, 3.0, 1.0]]);
        assert_eq!(run_dense(&layer, &store, &h), h);
    }

    #[test]
    fn dense_relu_clamps() {
        let mut store = ParamStore::new();
        let mut rng = RngState::new(2);
        let layer = DenseLayer::new(&mut store, "d", 3, 3, Activation::Relu, &mut rng);
        store.set_value(layer.weight, Matrix::identity(3));
        let h = Matrix::from_rows(&[vec![-1.0, 0.0, 2.0]]);
        let out = run_dense(&layer, &store, &h);
        assert_eq!(out.data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn dense_matches_hand_computed_affine_map() {
        let mut store = ParamStore::new();
        let mut rng = RngState::new(3);
        let layer = DenseLayer::new(&mut store, "d", 3, 2, Activation::Linear, &mut rng);
        store.set_value(
            layer.weight,
            Matrix::from_rows(&[vec![1.0, 0.5, -1.0], vec![2.0, 0.0, 0.25]]),
        );
        store.set_value(layer.bias, Matrix::from_rows(&[vec![0.1, -0.2]]));
        let h = Matrix::from_rows(&[vec![2.0, 4.0, 6.0], vec![-1.0, 0.0, 1.0]]);
        let out = run_dense(&layer, &store, &h);
        // row 0: [2 + 2 - 6 + 0.1, 4 + 1.5 - 0.2] = [-1.9, 5.3]
        assert!((out.get(0, 0) + 1.9).abs() < 1e-12);
        assert!((out.get(0, 1) - 5.3).abs() < 1e-12);
        // row 1: [-1 - 1 + 0.1, -2 + 0.25 - 0.2]
        assert!((out.get(1, 0) + 1.9).abs() < 1e-12);
        assert!((out.get(1, 1) + 1.95).abs() < 1e-12);
    }

    #[test]
    fn vdense_degenerate_posterior_matches_dense() {
        let mut store = ParamStore::new();
        let mut rng = RngState::new(4);
        let layer =
            VariationalDenseLayer::new(&mut store, "v", 2, 2, Activation::Linear, 0.01, &mut rng);
        // scale parameter at -30: softplus(-30) ~ 9.4e-14, effectively zero std
        store.set_value(layer.w_scale, Matrix::filled(2, 2, -30.0));
        store.set_value(layer.b_scale, Matrix::filled(1, 2, -30.0));

        let h = Matrix::from_rows(&[vec![0.7, -1.3]]);
        let mut t = Tape::new();
        let vh = t.constant(h.clone());
        let mut sample_rng = RngState::new(77);
        let sampled = layer.forward_sample(&mut t, &store, vh, &mut sample_rng);
        let meaned = layer.forward_mean(&mut t, &store, vh);
        let diff = t.value(sampled).sub(t.value(meaned)).frobenius_norm();
        assert!(diff < 1e-9, "stochastic path should collapse, diff {diff}");
    }

    #[test]
    fn vdense_fixed_seed_is_deterministic() {
        let mut store = ParamStore::new();
        let mut rng = RngState::new(5);
        let layer =
            VariationalDenseLayer::new(&mut store, "v", 3, 2, Activation::Relu, 0.01, &mut rng);
        let h = Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]);
        let run = || {
            let mut t = Tape::new();
            let vh = t.constant(h.clone());
            let mut r = RngState::new(123);
            let out = layer.forward_sample(&mut t, &store, vh, &mut r);
            t.value(out).clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn vdense_sample_mean_matches_posterior_mean() {
        // 1e5 forward samples of a 1x1 linear layer with input 1: the output
        // mean estimates weight-mean + bias-mean.
        let mut store = ParamStore::new();
        let mut rng = RngState::new(21);
        let layer =
            VariationalDenseLayer::new(&mut store, "v", 1, 1, Activation::Linear, 1.0, &mut rng);
        store.set_value(layer.w_mean, Matrix::scalar(0.7));
        store.set_value(layer.w_scale, Matrix::scalar(softplus_inverse(0.5)));
        store.set_value(layer.b_mean, Matrix::scalar(-0.2));
        store.set_value(layer.b_scale, Matrix::scalar(softplus_inverse(0.3)));

        let h = Matrix::scalar(1.0);
        let draws = 100_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut sample_rng = RngState::new(5);
        for _ in 0..draws {
            let mut t = Tape::new();
            let vh = t.constant(h.clone());
            let out = layer.forward_sample(&mut t, &store, vh, &mut sample_rng);
            let v = t.value(out).scalar_value();
            sum += v;
            sum_sq += v * v;
        }
        let n = draws as f64;
        let mean = sum / n;
        let var = (sum_sq / n - mean * mean).max(0.0);
        let se = (var / n).sqrt();
        let expected = 0.7 - 0.2;
        assert!(
            (mean - expected).abs() <= 3.0 * se,
            "MC mean {mean} vs {expected} (se {se})"
        );
    }

    #[test]
    fn vdense_kl_zero_at_prior_and_half_at_unit_mean() {
        let mut store = ParamStore::new();
        let mut rng = RngState::new(6);
        let layer =
            VariationalDenseLayer::new(&mut store, "v", 1, 1, Activation::Linear, 1.0, &mut rng);
        // posterior = prior: mu = 0, sigma = 1
        store.set_value(layer.w_mean, Matrix::scalar(0.0));
        store.set_value(layer.w_scale, Matrix::scalar(softplus_inverse(1.0)));
        store.set_value(layer.b_mean, Matrix::scalar(0.0));
        store.set_value(layer.b_scale, Matrix::scalar(softplus_inverse(1.0)));
        let mut t = Tape::new();
        let kl = layer.kl(&mut t, &store);
        assert!(t.value(kl).scalar_value().abs() < 1e-12);

        // single weight mu = 1, sigma = 1 adds 1/2
        store.set_value(layer.w_mean, Matrix::scalar(1.0));
        let mut t = Tape::new();
        let kl = layer.kl(&mut t, &store);
        assert!((t.value(kl).scalar_value() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn vdense_kl_nonnegative_random_states() {
        let mut rng = RngState::new(7);
        for trial in 0..20 {
            let mut store = ParamStore::new();
            let layer = VariationalDenseLayer::new(
                &mut store,
                "v",
                2,
                3,
                Activation::Linear,
                0.5,
                &mut rng,
            );
            store.set_value(layer.w_mean, rng.sample_standard_normal(3, 2));
            store.set_value(layer.w_scale, rng.sample_standard_normal(3, 2));
            store.set_value(layer.b_mean, rng.sample_standard_normal(1, 3));
            store.set_value(layer.b_scale, rng.sample_standard_normal(1, 3));
            let mut t = Tape::new();
            let kl = layer.kl(&mut t, &store);
            assert!(
                t.value(kl).scalar_value() >= 0.0,
                "trial {trial}: negative KL"
            );
        }
    }

    #[test]
    fn head_std_strictly_positive_even_for_large_negatives() {
        let mut t = Tape::new();
        let raw = t.constant(Matrix::from_rows(&[
            vec![0.0, -500.0],
            vec![1.0, -30.0],
            vec![2.0, 40.0],
        ]));
        let (_, std) = GaussianHead.decode(&mut t, raw);
        for v in t.value(std).data() {
            assert!(*v >= HEAD_STD_FLOOR);
        }
    }

    #[test]
    fn head_nll_closed_forms() {
        // mu = y, sigma = 1 gives ln(2 pi)/2 per point.
        let raw_scale = softplus_inverse(1.0 - HEAD_STD_FLOOR);
        let mut t = Tape::new();
        let raw = t.constant(Matrix::from_rows(&[
            vec![0.3, raw_scale],
            vec![-1.2, raw_scale],
        ]));
        let y = Matrix::column(&[0.3, -1.2]);
        let nll = GaussianHead.negative_loglik(&mut t, raw, &y);
        let expected = 0.5 * (2.0 * PI).ln();
        assert!((t.value(nll).scalar_value() - expected).abs() < 1e-9);

        // doubling sigma at zero residual adds ln 2
        let raw_scale2 = softplus_inverse(2.0 - HEAD_STD_FLOOR);
        let mut t2 = Tape::new();
        let raw2 = t2.constant(Matrix::from_rows(&[
            vec![0.3, raw_scale2],
            vec![-1.2, raw_scale2],
        ]));
        let nll2 = GaussianHead.negative_loglik(&mut t2, raw2, &y);
        let delta = t2.value(nll2).scalar_value() - t.value(nll).scalar_value();
        assert!((delta - 2.0f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn head_nll_matches_independent_density() {
        let mut rng = RngState::new(8);
        let raw = rng.sample_standard_normal(5, 2);
        let y_m = rng.sample_standard_normal(5, 1);
        let y: Vec<f64> = y_m.data().to_vec();
        let mut t = Tape::new();
        let vraw = t.constant(raw.clone());
        let nll = GaussianHead.negative_loglik(&mut t, vraw, &Matrix::column(&y));
        // duplicate formula, coded independently
        let mut acc = 0.0;
        for i in 0..5 {
            let mu = raw.get(i, 0);
            let sd = crate::numerics::softplus(raw.get(i, 1)) + HEAD_STD_FLOOR;
            let z = (y[i] - mu) / sd;
            acc += 0.5 * (2.0 * PI).ln() + sd.ln() + 0.5 * z * z;
        }
        acc /= 5.0;
        assert!((t.value(nll).scalar_value() - acc).abs() < 1e-12);
    }

    #[test]
    fn variational_expectation_degenerate_marginal() {
        // v = 0 reduces to the plain Gaussian log density.
        let mut store = ParamStore::new();
        let lik = GaussianLikelihood::new(&mut store, 0.25);
        let y = Matrix::column(&[1.0, -0.5]);
        let mean = Matrix::column(&[0.8, -0.1]);
        let mut t = Tape::new();
        let vm = t.constant(mean.clone());
        let vv = t.constant(Matrix::zeros(2, 1));
        let ve = lik.variational_expectation(&mut t, &store, vm, vv, &y);
        let mut expected = 0.0;
        for i in 0..2 {
            let z2 = (y.get(i, 0) - mean.get(i, 0)).powi(2) / 0.25;
            expected += -0.5 * (2.0 * PI * 0.25).ln() - 0.5 * z2;
        }
        assert!((t.value(ve).scalar_value() - expected).abs() < 1e-10);
    }

    #[test]
    fn variational_expectation_unit_case() {
        // m = y, v = s2 = 1: each point contributes -ln(2 pi)/2 - 1/2.
        let mut store = ParamStore::new();
        let lik = GaussianLikelihood::new(&mut store, 1.0);
        let y = Matrix::column(&[0.4, 2.0, -1.0]);
        let mut t = Tape::new();
        let vm = t.constant(y.clone());
        let vv = t.constant(Matrix::filled(3, 1, 1.0));
        let ve = lik.variational_expectation(&mut t, &store, vm, vv, &y);
        let expected = 3.0 * (-0.5 * (2.0 * PI).ln() - 0.5);
        assert!((t.value(ve).scalar_value() - expected).abs() < 1e-10);
    }

    #[test]
    fn variational_expectation_monotone_in_variance() {
        let mut store = ParamStore::new();
        let lik = GaussianLikelihood::new(&mut store, 0.3);
        let y = Matrix::column(&[0.2]);
        let eval = |v: f64, store: &ParamStore| {
            let mut t = Tape::new();
            let vm = t.constant(Matrix::column(&[0.5]));
            let vv = t.constant(Matrix::column(&[v]));
            let ve = lik.variational_expectation(&mut t, store, vm, vv, &y);
            t.value(ve).scalar_value()
        };
        let mut prev = eval(0.0, &store);
        for v in [0.1, 0.5, 1.0, 4.0] {
            let cur = eval(v, &store);
            assert!(cur < prev, "expected strictly decreasing, {cur} !< {prev}");
            prev = cur;
        }
    }
}
