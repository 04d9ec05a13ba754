//! Finite-difference verification of every layer, kernel, and loss
//! gradient, runnable from the test suite and the `gradcheck` command.

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::Result;
use crate::gp_layer::MeanFunction;
use crate::kernels::{ArcCosineOrder, KernelConfig};
use crate::nn_layers::Activation;
use crate::numerics::{Matrix, RngState};
use crate::oracle::finite_diff_grad;
use crate::training::{build_model, Dataset, LayerSpec, LossKind, Model, ModelSpec};

/// Relative-error threshold every component must meet.
pub const TOLERANCE: f64 = 1e-4;

const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct ComponentReport {
    pub name: &'static str,
    pub max_rel_error: f64,
}

impl ComponentReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub components: Vec<ComponentReport>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.components.iter().all(ComponentReport::passed)
    }
}

/// Scaled relative error; absolute for magnitudes below 1.
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Largest relative disagreement between two gradient sets.
pub fn max_rel_error(analytic: &[Matrix], numeric: &[Matrix]) -> f64 {
    let mut worst = 0.0f64;
    for (a, n) in analytic.iter().zip(numeric) {
        for (av, nv) in a.data().iter().zip(n.data()) {
            worst = worst.max(rel_error(*av, *nv));
        }
    }
    worst
}

/// Compares reverse-mode gradients against central finite differences for a
/// scalar loss over the given parameters.
fn check(
    store: &mut ParamStore,
    ids: &[ParamId],
    build: impl Fn(&mut Tape, &ParamStore) -> Var,
) -> f64 {
    let mut tape = Tape::new();
    let root = build(&mut tape, store);
    let grads = tape.backward(root).expect("scalar gradcheck root");

    let analytic: Vec<Matrix> = ids
        .iter()
        .map(|&id| {
            grads
                .get(id)
                .cloned()
                .unwrap_or_else(|| Matrix::zeros(store.value(id).rows(), store.value(id).cols()))
        })
        .collect();
    let numeric = finite_diff_grad(store, ids, FD_STEP, |s| {
        let mut t = Tape::new();
        let r = build(&mut t, s);
        t.value(r).scalar_value()
    });
    max_rel_error(&analytic, &numeric)
}

fn model_loss_component(model: &Model, data: &Dataset, sample_seed: u64) -> f64 {
    let ids = model.trainable_ids();
    let layers = model.layers.clone();
    let likelihood = model.likelihood.clone();
    let loss = model.loss;
    let n_train = model.n_train;
    let input_dim = model.input_dim;
    let x = data.x.clone();
    let y = data.y.clone();

    let mut store = model.params.clone();
    let eval = move |t: &mut Tape, s: &ParamStore| -> Var {
        let probe = Model {
            layers: layers.clone(),
            likelihood: likelihood.clone(),
            loss,
            n_train,
            input_dim,
            params: s.clone(),
        };
        probe
            .loss_on_tape(t, &x, &y, &mut RngState::new(sample_seed))
            .expect("gradcheck loss")
    };
    check(&mut store, &ids, eval)
}

fn tiny_data(n: usize, seed: u64) -> Dataset {
    let mut rng = RngState::new(seed);
    let x = rng.sample_standard_normal(n, 1);
    let noise = rng.sample_standard_normal(n, 1);
    let y = x.map(|v| (1.5 * v).sin()).add(&noise.scale(0.1));
    Dataset::new(x, y).unwrap()
}

fn kernel_component(config: KernelConfig) -> f64 {
    let mut store = ParamStore::new();
    let kernel = config.build(&mut store);
    let mut rng = RngState::new(17);
    let x_id = store.add(
        "x",
        rng.sample_standard_normal(4, 2),
        crate::autodiff::Transform::Identity,
    );
    let x2_id = store.add(
        "x2",
        rng.sample_standard_normal(3, 2),
        crate::autodiff::Transform::Identity,
    );
    let weights = rng.sample_standard_normal(4, 3);
    let mut ids = kernel.hyperparameter_ids();
    ids.push(x_id);
    ids.push(x2_id);

    check(&mut store, &ids, move |t, s| {
        let vx = t.param(s, x_id);
        let vx2 = t.param(s, x2_id);
        let k = kernel.matrix(t, s, vx, vx2);
        let w = t.constant(weights.clone());
        let prod = t.mul(k, w);
        t.reduce_sum(prod)
    })
}

/// Runs the full component suite. Dimensions are kept at 6 or below so
/// finite differences stay well inside their accuracy regime.
pub fn run_all() -> Result<GradcheckReport> {
    let mut components = Vec::new();

    // dense stack under MSE
    {
        let data = tiny_data(5, 1);
        let spec = ModelSpec {
            input_dim: 1,
            layers: vec![
                LayerSpec::Dense {
                    units: 3,
                    activation: Activation::Relu,
                },
                LayerSpec::Dense {
                    units: 1,
                    activation: Activation::Linear,
                },
            ],
            loss: LossKind::Mse,
            likelihood_noise: None,
        };
        let model = build_model(&spec, &data, 2)?;
        components.push(ComponentReport {
            name: "dense_mse",
            max_rel_error: model_loss_component(&model, &data, 11),
        });
    }

    // variational dense + head under NLL
    {
        let data = tiny_data(5, 3);
        let spec = ModelSpec {
            input_dim: 1,
            layers: vec![
                LayerSpec::Dense {
                    units: 3,
                    activation: Activation::Relu,
                },
                LayerSpec::VariationalDense {
                    units: 2,
                    kl_weight: None,
                },
                LayerSpec::GaussianHead,
            ],
            loss: LossKind::Nll,
            likelihood_noise: None,
        };
        let model = build_model(&spec, &data, 4)?;
        components.push(ComponentReport {
            name: "variational_dense_nll",
            max_rel_error: model_loss_component(&model, &data, 13),
        });
    }

    // kernels, hyperparameters and inputs
    components.push(ComponentReport {
        name: "kernel_squared_exponential",
        max_rel_error: kernel_component(KernelConfig::SquaredExponential {
            variance: 1.0,
            lengthscale: 0.8,
        }),
    });
    components.push(ComponentReport {
        name: "kernel_arc_cosine_0",
        max_rel_error: kernel_component(KernelConfig::ArcCosine {
            order: ArcCosineOrder::Zero,
            variance: 1.0,
            weight_variance: 1.0,
            bias_variance: 1.0,
        }),
    });
    components.push(ComponentReport {
        name: "kernel_arc_cosine_1",
        max_rel_error: kernel_component(KernelConfig::ArcCosine {
            order: ArcCosineOrder::One,
            variance: 1.0,
            weight_variance: 1.0,
            bias_variance: 1.0,
        }),
    });
    components.push(ComponentReport {
        name: "kernel_polynomial",
        max_rel_error: kernel_component(KernelConfig::Polynomial {
            degree: 3,
            offset: 1.0,
            variance: 1.0,
        }),
    });

    // GP layer marginals (mean and variance jointly)
    {
        let mut store = ParamStore::new();
        let kernel = KernelConfig::default().build(&mut store);
        let mut rng = RngState::new(5);
        let z = crate::gp_layer::even_grid(-1.5, 1.5, 3, 1);
        let layer = crate::gp_layer::GpLayer::new(
            &mut store,
            "gp",
            kernel,
            z,
            1,
            MeanFunction::Zero,
        )?;
        store.set_value(layer.q_mean, rng.sample_standard_normal(3, 1));
        let x = rng.sample_standard_normal(4, 1);
        let w_mean = rng.sample_standard_normal(4, 1);
        let w_var = rng.sample_standard_normal(4, 1);
        let ids = layer.param_ids();
        let err = check(&mut store, &ids, move |t, s| {
            let vx = t.constant(x.clone());
            let (mean, var) = layer.marginals_on_tape(t, s, vx).expect("marginals");
            let wm = t.constant(w_mean.clone());
            let wv = t.constant(w_var.clone());
            let a = t.mul(mean, wm);
            let b = t.mul(var, wv);
            let sa = t.reduce_sum(a);
            let sb = t.reduce_sum(b);
            t.add(sa, sb)
        });
        components.push(ComponentReport {
            name: "gp_layer_marginals",
            max_rel_error: err,
        });
    }

    // full hybrid ELBO: dense feature map into a GP with likelihood
    {
        let data = tiny_data(6, 7);
        let spec = ModelSpec {
            input_dim: 1,
            layers: vec![
                LayerSpec::Dense {
                    units: 2,
                    activation: Activation::Relu,
                },
                LayerSpec::Dense {
                    units: 1,
                    activation: Activation::Linear,
                },
                LayerSpec::Gp {
                    kernel: KernelConfig::default(),
                    num_inducing: 3,
                    mean_function: MeanFunction::Zero,
                },
            ],
            loss: LossKind::Elbo,
            likelihood_noise: Some(0.1),
        };
        let model = build_model(&spec, &data, 8)?;
        components.push(ComponentReport {
            name: "elbo_hybrid",
            max_rel_error: model_loss_component(&model, &data, 17),
        });
    }

    // deep GP: two stacked GP layers, sampling between them
    {
        let data = tiny_data(5, 9);
        let spec = ModelSpec {
            input_dim: 1,
            layers: vec![
                LayerSpec::Gp {
                    kernel: KernelConfig::default(),
                    num_inducing: 3,
                    mean_function: MeanFunction::Zero,
                },
                LayerSpec::Gp {
                    kernel: KernelConfig::default(),
                    num_inducing: 3,
                    mean_function: MeanFunction::Zero,
                },
            ],
            loss: LossKind::Elbo,
            likelihood_noise: Some(0.1),
        };
        let model = build_model(&spec, &data, 10)?;
        components.push(ComponentReport {
            name: "elbo_deep_gp",
            max_rel_error: model_loss_component(&model, &data, 19),
        });
    }

    Ok(GradcheckReport { components })
}
