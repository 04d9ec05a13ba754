//! Run configuration: a single JSON document in which every field has a
//! default, plus the preset catalog. Command-line flags override file
//! values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use hbnn_core::gp_layer::MeanFunction;
use hbnn_core::kernels::{ArcCosineOrder, KernelConfig};
use hbnn_core::nn_layers::Activation;
use hbnn_core::training::{LayerSpec, LossKind, ModelSpec, TrainConfig};

use crate::CliError;

pub const PRESETS: [&str; 6] = [
    "dnn",
    "hbnn-replace",
    "hbnn-append",
    "hfbnn",
    "hfbnn-deep",
    "hfbnn-arccosine",
];

/// Default size and seed of the bundled synthetic dataset used by
/// `--data gen`.
pub const GENERATED_N: usize = 200;
pub const GENERATED_SEED: u64 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// One of the preset names, or `null` when `layers` is given.
    pub preset: Option<String>,
    /// Explicit layer list, alternative to a preset.
    pub layers: Option<Vec<LayerEntry>>,
    /// Loss for explicit layer lists: "mse", "nll", or "elbo".
    pub loss: Option<String>,
    /// Initial Gaussian-likelihood noise variance (ELBO models).
    pub likelihood_noise: f64,
    pub kernel: KernelEntry,
    pub num_inducing: usize,
    pub epochs: usize,
    /// Learning rate; when absent, 0.01 for ELBO models and 0.001 otherwise.
    pub lr: Option<f64>,
    /// Minibatch size; full batch when absent.
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub mc_samples: usize,
    /// "gen" for the bundled generator or a path to an `x,y` CSV file.
    pub data: String,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            preset: None,
            layers: None,
            loss: None,
            likelihood_noise: hbnn_core::nn_layers::GaussianLikelihood::DEFAULT_NOISE_VARIANCE,
            kernel: KernelEntry::default(),
            num_inducing: 20,
            epochs: 500,
            lr: None,
            batch_size: None,
            seed: 0,
            mc_samples: 256,
            data: "gen".into(),
            out: PathBuf::from("out"),
        }
    }
}

/// Kernel selection by name with optional hyperparameter overrides.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct KernelEntry {
    /// "squared_exponential" | "arc_cosine" | "polynomial"; `null` keeps the
    /// preset's own kernel.
    pub name: Option<String>,
    pub variance: f64,
    pub lengthscale: f64,
    pub weight_variance: f64,
    pub bias_variance: f64,
    pub order: u8,
    pub degree: u32,
    pub offset: f64,
}

impl Default for KernelEntry {
    fn default() -> Self {
        KernelEntry {
            name: None,
            variance: 1.0,
            lengthscale: 1.0,
            weight_variance: 1.0,
            bias_variance: 1.0,
            order: 0,
            degree: 3,
            offset: 1.0,
        }
    }
}

impl KernelEntry {
    /// Resolves to a kernel config; `fallback` is the preset's own choice.
    pub fn resolve(&self, fallback: &str) -> Result<KernelConfig, CliError> {
        let name = self.name.as_deref().unwrap_or(fallback);
        match name {
            "squared_exponential" => Ok(KernelConfig::SquaredExponential {
                variance: self.variance,
                lengthscale: self.lengthscale,
            }),
            "arc_cosine" => Ok(KernelConfig::ArcCosine {
                order: match self.order {
                    0 => ArcCosineOrder::Zero,
                    1 => ArcCosineOrder::One,
                    o => {
                        return Err(CliError::Config(format!(
                            "arc_cosine order must be 0 or 1, got {o}"
                        )))
                    }
                },
                variance: self.variance,
                weight_variance: self.weight_variance,
                bias_variance: self.bias_variance,
            }),
            "polynomial" => {
                if self.degree < 1 {
                    return Err(CliError::Config("polynomial degree must be >= 1".into()));
                }
                Ok(KernelConfig::Polynomial {
                    degree: self.degree,
                    offset: self.offset,
                    variance: self.variance,
                })
            }
            other => Err(CliError::Config(format!(
                "unknown kernel {other:?}; expected squared_exponential, arc_cosine, or polynomial"
            ))),
        }
    }
}

/// One entry of an explicit layer list.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerEntry {
    Dense {
        units: usize,
        #[serde(default = "default_activation")]
        activation: String,
    },
    VariationalDense {
        units: usize,
    },
    Gp {
        #[serde(default)]
        mean_function: Option<String>,
    },
    GaussianHead,
}

fn default_activation() -> String {
    "relu".into()
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {path:?}: {e}")))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid config {path:?}: {e}")))
    }

    /// Model description plus its loss, resolved from the preset or the
    /// explicit layer list. Rejects unknown preset and kernel names before
    /// any computation happens.
    pub fn model_spec(&self) -> Result<ModelSpec, CliError> {
        match (&self.preset, &self.layers) {
            (Some(_), Some(_)) => Err(CliError::Config(
                "give either a preset or an explicit layer list, not both".into(),
            )),
            (None, None) => Err(CliError::Config(
                "no model given; pass --preset or a config file with layers".into(),
            )),
            (Some(name), None) => self.preset_spec(name),
            (None, Some(entries)) => self.explicit_spec(entries),
        }
    }

    fn preset_spec(&self, name: &str) -> Result<ModelSpec, CliError> {
        let dense = |units, activation| LayerSpec::Dense { units, activation };
        let gp = |kernel| LayerSpec::Gp {
            kernel,
            num_inducing: self.num_inducing,
            mean_function: MeanFunction::Zero,
        };
        let spec = match name {
            "dnn" => ModelSpec {
                input_dim: 1,
                layers: vec![
                    dense(100, Activation::Relu),
                    dense(100, Activation::Relu),
                    dense(1, Activation::Linear),
                ],
                loss: LossKind::Mse,
                likelihood_noise: None,
            },
            "hbnn-replace" => ModelSpec {
                input_dim: 1,
                layers: vec![
                    dense(100, Activation::Relu),
                    dense(100, Activation::Relu),
                    LayerSpec::VariationalDense {
                        units: 2,
                        kl_weight: None,
                    },
                    LayerSpec::GaussianHead,
                ],
                loss: LossKind::Nll,
                likelihood_noise: None,
            },
            "hbnn-append" => ModelSpec {
                input_dim: 1,
                layers: vec![
                    dense(100, Activation::Relu),
                    dense(100, Activation::Relu),
                    dense(1, Activation::Linear),
                    LayerSpec::VariationalDense {
                        units: 2,
                        kl_weight: None,
                    },
                    LayerSpec::GaussianHead,
                ],
                loss: LossKind::Nll,
                likelihood_noise: None,
            },
            "hfbnn" => ModelSpec {
                input_dim: 1,
                layers: vec![
                    dense(100, Activation::Relu),
                    dense(100, Activation::Relu),
                    dense(1, Activation::Linear),
                    gp(self.kernel.resolve("squared_exponential")?),
                ],
                loss: LossKind::Elbo,
                likelihood_noise: Some(self.likelihood_noise),
            },
            "hfbnn-deep" => ModelSpec {
                input_dim: 1,
                layers: vec![
                    dense(100, Activation::Relu),
                    dense(100, Activation::Relu),
                    dense(1, Activation::Linear),
                    gp(self.kernel.resolve("squared_exponential")?),
                    gp(self.kernel.resolve("squared_exponential")?),
                ],
                loss: LossKind::Elbo,
                likelihood_noise: Some(self.likelihood_noise),
            },
            "hfbnn-arccosine" => ModelSpec {
                input_dim: 1,
                layers: vec![
                    dense(100, Activation::Relu),
                    dense(100, Activation::Relu),
                    dense(1, Activation::Linear),
                    gp(self.kernel.resolve("arc_cosine")?),
                ],
                loss: LossKind::Elbo,
                likelihood_noise: Some(self.likelihood_noise),
            },
            other => {
                return Err(CliError::Config(format!(
                    "unknown preset {other:?}; expected one of {}",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(spec)
    }

    fn explicit_spec(&self, entries: &[LayerEntry]) -> Result<ModelSpec, CliError> {
        if entries.is_empty() {
            return Err(CliError::Config("layer list is empty".into()));
        }
        let loss = match self.loss.as_deref() {
            Some("mse") => LossKind::Mse,
            Some("nll") => LossKind::Nll,
            Some("elbo") => LossKind::Elbo,
            Some(other) => {
                return Err(CliError::Config(format!(
                    "unknown loss {other:?}; expected mse, nll, or elbo"
                )))
            }
            None => {
                return Err(CliError::Config(
                    "an explicit layer list needs a loss (mse, nll, or elbo)".into(),
                ))
            }
        };
        let mut layers = Vec::with_capacity(entries.len());
        for entry in entries {
            layers.push(match entry {
                LayerEntry::Dense { units, activation } => LayerSpec::Dense {
                    units: *units,
                    activation: match activation.as_str() {
                        "relu" => Activation::Relu,
                        "linear" => Activation::Linear,
                        other => {
                            return Err(CliError::Config(format!(
                                "unknown activation {other:?}; expected relu or linear"
                            )))
                        }
                    },
                },
                LayerEntry::VariationalDense { units } => LayerSpec::VariationalDense {
                    units: *units,
                    kl_weight: None,
                },
                LayerEntry::Gp { mean_function } => LayerSpec::Gp {
                    kernel: self.kernel.resolve("squared_exponential")?,
                    num_inducing: self.num_inducing,
                    mean_function: match mean_function.as_deref() {
                        None | Some("zero") => MeanFunction::Zero,
                        Some("identity") => MeanFunction::Identity,
                        Some(other) => {
                            return Err(CliError::Config(format!(
                                "unknown mean function {other:?}; expected zero or identity"
                            )))
                        }
                    },
                },
                LayerEntry::GaussianHead => LayerSpec::GaussianHead,
            });
        }
        Ok(ModelSpec {
            input_dim: 1,
            layers,
            loss,
            likelihood_noise: matches!(loss, LossKind::Elbo).then_some(self.likelihood_noise),
        })
    }

    /// Training hyperparameters with the loss-dependent learning-rate
    /// default: 0.01 for GP-bearing (ELBO) models, 0.001 otherwise.
    pub fn train_config(&self, loss: LossKind) -> Result<TrainConfig, CliError> {
        if self.epochs == 0 {
            return Err(CliError::Config("epochs must be at least 1".into()));
        }
        let lr = self
            .lr
            .unwrap_or(if loss == LossKind::Elbo { 0.01 } else { 0.001 });
        if lr <= 0.0 {
            return Err(CliError::Config("learning rate must be positive".into()));
        }
        Ok(TrainConfig {
            epochs: self.epochs,
            lr,
            batch_size: self.batch_size,
            seed: self.seed,
            mc_samples_predict: self.mc_samples,
        })
    }
}
