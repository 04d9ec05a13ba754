//! Model composition, loss functions, optimization, fitting, prediction
//! with uncertainty, and metrics.

mod optimizer;
mod run;

pub use optimizer::AdamState;
pub use run::{fit, metrics, predict, FitError, Metrics, Prediction, TrainConfig, TrainingReport};

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::gp_layer::{even_grid, GpLayer, MeanFunction};
use crate::kernels::KernelConfig;
use crate::nn_layers::{
    Activation, DenseLayer, GaussianHead, GaussianLikelihood, VariationalDenseLayer,
};
use crate::numerics::{Matrix, RngState};

/// A regression dataset: inputs `N x D`, targets `N x 1`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Matrix,
}

impl Dataset {
    pub fn new(x: Matrix, y: Matrix) -> Result<Self> {
        if x.rows() != y.rows() || y.cols() != 1 {
            return Err(Error::InvalidInput(format!(
                "dataset needs x: N x D and y: N x 1, got {:?} and {:?}",
                x.shape(),
                y.shape()
            )));
        }
        if x.rows() == 0 {
            return Err(Error::InvalidInput("dataset is empty".into()));
        }
        Ok(Dataset { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Range of the first input column, used to place inducing-point grids.
    pub fn input_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..self.x.rows() {
            let v = self.x.get(i, 0);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(indices),
            y: self.y.select_rows(indices),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    Nll,
    Elbo,
}

/// Declarative layer description; realized into parameters by
/// [`build_model`].
#[derive(Debug, Clone)]
pub enum LayerSpec {
    Dense {
        units: usize,
        activation: Activation,
    },
    /// Variational dense layer; `kl_weight` defaults to `1 / N_train` when
    /// `None`.
    VariationalDense {
        units: usize,
        kl_weight: Option<f64>,
    },
    Gp {
        kernel: KernelConfig,
        num_inducing: usize,
        mean_function: MeanFunction,
    },
    GaussianHead,
}

/// Declarative model description: an ordered layer list, the training loss,
/// and the terminal likelihood (ELBO models only).
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
    pub loss: LossKind,
    /// Initial noise variance of the Gaussian likelihood; required for the
    /// ELBO loss and forbidden otherwise.
    pub likelihood_noise: Option<f64>,
}

/// One realized layer in a stack.
#[derive(Debug, Clone)]
pub enum Layer {
    Dense(DenseLayer),
    VariationalDense(VariationalDenseLayer),
    Gp(GpLayer),
    Head(GaussianHead),
}

impl Layer {
    fn is_stochastic(&self) -> bool {
        matches!(self, Layer::VariationalDense(_) | Layer::Gp(_))
    }

    fn param_ids(&self) -> Vec<ParamId> {
        match self {
            Layer::Dense(l) => l.param_ids(),
            Layer::VariationalDense(l) => l.param_ids(),
            Layer::Gp(l) => l.param_ids(),
            Layer::Head(_) => Vec::new(),
        }
    }
}

/// A realized model: layers bound to parameters in one store.
#[derive(Debug, Clone)]
pub struct Model {
    pub layers: Vec<Layer>,
    pub likelihood: Option<GaussianLikelihood>,
    pub loss: LossKind,
    pub n_train: usize,
    pub input_dim: usize,
    pub params: ParamStore,
}

/// How stochastic layers behave during a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    /// Draw one reparameterized sample per stochastic layer.
    Sample,
    /// Propagate predictive means.
    Mean,
}

/// Tape-level output of a stack.
pub enum StackOutput {
    /// Deterministic terminal layer.
    Point(Var),
    /// Terminal Gaussian head, raw 2-column pre-decode output.
    HeadRaw(Var),
    /// Terminal GP layer: analytic per-point marginals.
    GpMarginals { mean: Var, variance: Var },
}

/// Value-level output of [`Model::forward`].
#[derive(Debug, Clone)]
pub enum ForwardValues {
    Point(Matrix),
    Marginals { mean: Matrix, variance: Matrix },
}

/// Realizes a [`ModelSpec`] into parameters. Inducing-point grids cover the
/// observed range of the first input column, so the dataset is needed at
/// build time; dense initializations draw from `seed`.
pub fn build_model(spec: &ModelSpec, data: &Dataset, seed: u64) -> Result<Model> {
    if data.x.cols() != spec.input_dim {
        return Err(Error::InvalidModel(format!(
            "data has {} input columns but the model expects {}",
            data.x.cols(),
            spec.input_dim
        )));
    }
    let n_train = data.len();
    let mut store = ParamStore::new();
    let mut rng = RngState::new(seed);
    let (lo, hi) = data.input_range();

    let mut layers = Vec::with_capacity(spec.layers.len());
    let mut width = spec.input_dim;
    for (i, ls) in spec.layers.iter().enumerate() {
        let name = format!("layer{i}");
        match ls {
            LayerSpec::Dense { units, activation } => {
                let l = DenseLayer::new(&mut store, &name, width, *units, *activation, &mut rng);
                width = *units;
                layers.push(Layer::Dense(l));
            }
            LayerSpec::VariationalDense { units, kl_weight } => {
                let klw = kl_weight.unwrap_or(1.0 / n_train as f64);
                let l = VariationalDenseLayer::new(
                    &mut store,
                    &name,
                    width,
                    *units,
                    Activation::Linear,
                    klw,
                    &mut rng,
                );
                width = *units;
                layers.push(Layer::VariationalDense(l));
            }
            LayerSpec::Gp {
                kernel,
                num_inducing,
                mean_function,
            } => {
                let k = kernel.build(&mut store);
                let z = even_grid(lo, hi, *num_inducing, width);
                let l = GpLayer::new(&mut store, &name, k, z, 1, *mean_function)?;
                width = 1;
                layers.push(Layer::Gp(l));
            }
            LayerSpec::GaussianHead => {
                if width != 2 {
                    return Err(Error::InvalidModel(format!(
                        "Gaussian head needs a 2-wide input, got {width}"
                    )));
                }
                width = 1;
                layers.push(Layer::Head(GaussianHead));
            }
        }
    }

    let likelihood = match (spec.loss, spec.likelihood_noise) {
        (LossKind::Elbo, Some(v)) => Some(GaussianLikelihood::new(&mut store, v)),
        (LossKind::Elbo, None) => {
            return Err(Error::InvalidModel(
                "the ELBO loss requires a Gaussian likelihood".into(),
            ))
        }
        (_, Some(_)) => {
            return Err(Error::InvalidModel(
                "a likelihood is only valid with the ELBO loss".into(),
            ))
        }
        (_, None) => None,
    };

    let model = Model {
        layers,
        likelihood,
        loss: spec.loss,
        n_train,
        input_dim: spec.input_dim,
        params: store,
    };
    model.validate()?;
    Ok(model)
}

impl Model {
    /// Structural invariants: conforming widths (already enforced during the
    /// build) and loss/terminal compatibility.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidModel("model has no layers".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if matches!(layer, Layer::Head(_)) && i + 1 != self.layers.len() {
                return Err(Error::InvalidModel(
                    "a Gaussian head must be the terminal layer".into(),
                ));
            }
        }
        let last = self.layers.last().unwrap();
        match self.loss {
            LossKind::Mse => {
                if last.is_stochastic() || matches!(last, Layer::Head(_)) {
                    return Err(Error::InvalidModel(
                        "the MSE loss needs a deterministic terminal layer".into(),
                    ));
                }
            }
            LossKind::Nll => {
                if !matches!(last, Layer::Head(_)) {
                    return Err(Error::InvalidModel(
                        "the NLL loss needs a Gaussian head terminal".into(),
                    ));
                }
            }
            LossKind::Elbo => {
                if !matches!(last, Layer::Gp(_)) {
                    return Err(Error::InvalidModel(
                        "the ELBO loss needs a GP terminal layer".into(),
                    ));
                }
                if self.likelihood.is_none() {
                    return Err(Error::InvalidModel(
                        "the ELBO loss requires a Gaussian likelihood".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.layers.iter().flat_map(|l| l.param_ids()).collect();
        if let Some(lik) = &self.likelihood {
            ids.extend(lik.param_ids());
        }
        ids
    }

    /// Whether any stochastic layer sits before the terminal layer, i.e.
    /// whether prediction genuinely needs Monte-Carlo passes.
    pub fn has_nonterminal_stochastic(&self) -> bool {
        self.layers
            .iter()
            .take(self.layers.len().saturating_sub(1))
            .any(Layer::is_stochastic)
    }

    /// Propagates `x` through the stack on the given tape. In sample mode
    /// stochastic layers draw reparameterized samples; in mean mode they
    /// propagate predictive means. A terminal GP layer always contributes
    /// analytic marginals; a terminal variational dense layer in sample mode
    /// samples as usual.
    pub fn forward_on_tape(
        &self,
        t: &mut Tape,
        x: Var,
        rng: &mut RngState,
        mode: ForwardMode,
    ) -> Result<StackOutput> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Dense(l) => h = l.forward(t, &self.params, h),
                Layer::VariationalDense(l) => {
                    h = match mode {
                        ForwardMode::Sample => l.forward_sample(t, &self.params, h, rng),
                        ForwardMode::Mean => l.forward_mean(t, &self.params, h),
                    }
                }
                Layer::Gp(l) => {
                    if i == last {
                        let (mean, variance) = l.marginals_on_tape(t, &self.params, h)?;
                        return Ok(StackOutput::GpMarginals { mean, variance });
                    }
                    h = match mode {
                        ForwardMode::Sample => l.sample_on_tape(t, &self.params, h, rng)?,
                        ForwardMode::Mean => l.marginals_on_tape(t, &self.params, h)?.0,
                    };
                }
                Layer::Head(_) => {
                    return Ok(StackOutput::HeadRaw(h));
                }
            }
        }
        Ok(StackOutput::Point(h))
    }

    /// Forward pass returning plain values.
    pub fn forward(
        &self,
        x: &Matrix,
        rng: &mut RngState,
        mode: ForwardMode,
    ) -> Result<ForwardValues> {
        let mut t = Tape::new();
        let vx = t.constant(x.clone());
        match self.forward_on_tape(&mut t, vx, rng, mode)? {
            StackOutput::Point(v) => Ok(ForwardValues::Point(t.value(v).clone())),
            StackOutput::HeadRaw(raw) => {
                let (mean, std) = GaussianHead.decode(&mut t, raw);
                let var = t.square(std);
                Ok(ForwardValues::Marginals {
                    mean: t.value(mean).clone(),
                    variance: t.value(var).clone(),
                })
            }
            StackOutput::GpMarginals { mean, variance } => Ok(ForwardValues::Marginals {
                mean: t.value(mean).clone(),
                variance: t.value(variance).clone(),
            }),
        }
    }

    /// Mean squared error of the stack's point output against `y`.
    pub fn mse_loss(&self, t: &mut Tape, x: &Matrix, y: &Matrix, rng: &mut RngState) -> Result<Var> {
        if self.loss != LossKind::Mse {
            return Err(Error::InvalidModel("model was not built for MSE".into()));
        }
        let vx = t.constant(x.clone());
        let out = match self.forward_on_tape(t, vx, rng, ForwardMode::Sample)? {
            StackOutput::Point(v) => v,
            _ => return Err(Error::InvalidModel("MSE needs a point output".into())),
        };
        let vy = t.constant(y.clone());
        let resid = t.sub(out, vy);
        let sq = t.square(resid);
        let loss = t.reduce_mean(sq);
        t.ensure_finite(loss, "mse_loss")?;
        Ok(loss)
    }

    /// Mean head negative log-likelihood plus the weighted KL of every
    /// variational dense layer.
    pub fn negative_loglik_loss(
        &self,
        t: &mut Tape,
        x: &Matrix,
        y: &Matrix,
        rng: &mut RngState,
    ) -> Result<Var> {
        if self.loss != LossKind::Nll {
            return Err(Error::InvalidModel("model was not built for NLL".into()));
        }
        let vx = t.constant(x.clone());
        let raw = match self.forward_on_tape(t, vx, rng, ForwardMode::Sample)? {
            StackOutput::HeadRaw(raw) => raw,
            _ => return Err(Error::InvalidModel("NLL needs a Gaussian head".into())),
        };
        let mut loss = GaussianHead.negative_loglik(t, raw, y);
        for layer in &self.layers {
            if let Layer::VariationalDense(l) = layer {
                let kl = l.kl(t, &self.params);
                let weighted = t.scale(kl, l.kl_weight);
                loss = t.add(loss, weighted);
            }
        }
        t.ensure_finite(loss, "negative_loglik_loss")?;
        Ok(loss)
    }

    /// Negative evidence lower bound over a batch:
    ///
    /// `-( (N / |batch|) * expected log-likelihood
    ///     - sum of GP KL terms
    ///     - sum of kl_weight * variational dense KL terms )`
    ///
    /// Non-terminal stochastic layers contribute one reparameterized sample;
    /// the terminal GP layer contributes analytic marginals.
    pub fn negative_elbo(
        &self,
        t: &mut Tape,
        x_batch: &Matrix,
        y_batch: &Matrix,
        rng: &mut RngState,
    ) -> Result<Var> {
        if self.loss != LossKind::Elbo {
            return Err(Error::InvalidModel("model was not built for the ELBO".into()));
        }
        let lik = self
            .likelihood
            .as_ref()
            .expect("validated ELBO model has a likelihood");
        let vx = t.constant(x_batch.clone());
        let (mean, variance) =
            match self.forward_on_tape(t, vx, rng, ForwardMode::Sample)? {
                StackOutput::GpMarginals { mean, variance } => (mean, variance),
                _ => return Err(Error::InvalidModel("ELBO needs a terminal GP layer".into())),
            };
        let varexp = lik.variational_expectation(t, &self.params, mean, variance, y_batch);
        let scale = self.n_train as f64 / x_batch.rows() as f64;
        let data_term = t.scale(varexp, scale);

        let mut elbo = data_term;
        for layer in &self.layers {
            match layer {
                Layer::Gp(l) => {
                    let kl = l.kl_on_tape(t, &self.params)?;
                    elbo = t.sub(elbo, kl);
                }
                Layer::VariationalDense(l) => {
                    let kl = l.kl(t, &self.params);
                    let weighted = t.scale(kl, l.kl_weight);
                    elbo = t.sub(elbo, weighted);
                }
                _ => {}
            }
        }
        let loss = t.neg(elbo);
        t.ensure_finite(loss, "negative_elbo")?;
        Ok(loss)
    }

    /// The loss node named by the model's loss tag.
    pub fn loss_on_tape(
        &self,
        t: &mut Tape,
        x: &Matrix,
        y: &Matrix,
        rng: &mut RngState,
    ) -> Result<Var> {
        match self.loss {
            LossKind::Mse => self.mse_loss(t, x, y, rng),
            LossKind::Nll => self.negative_loglik_loss(t, x, y, rng),
            LossKind::Elbo => self.negative_elbo(t, x, y, rng),
        }
    }
}
