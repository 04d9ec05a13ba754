//! Fitting, prediction with uncertainty, and evaluation metrics.

use std::fmt;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::gp_layer::VARIANCE_FLOOR;
use crate::nn_layers::GaussianHead;
use crate::numerics::{Matrix, RngState};
use crate::training::{AdamState, ForwardMode, Model, StackOutput};

use crate::autodiff::Tape;
use crate::training::Dataset;

/// Gaussian 95% interval multiplier.
const Z_95: f64 = 1.96;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// `None` trains full batch; `Some(b)` shuffles each epoch and rescales
    /// the ELBO data term by `N / b`.
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub mc_samples_predict: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            lr: 0.01,
            batch_size: None,
            seed: 0,
            mc_samples_predict: 256,
        }
    }
}

/// Error with the epoch at which training failed.
#[derive(Debug)]
pub struct FitError {
    pub epoch: usize,
    pub source: Error,
}

impl fmt::Display for FitError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "training failed at epoch {}: {}", self.epoch, self.source)
    }
}

impl std::error::Error for FitError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

#[derive(Debug, Clone)]
pub struct TrainingReport {
    /// One loss value per epoch (mean over batches when minibatching).
    pub loss_trace: Vec<f64>,
    pub final_loss: f64,
    pub metrics: Metrics,
    pub wall_clock_seconds: f64,
    /// Largest diagonal jitter any factorization needed during training.
    pub max_jitter: f64,
    /// Total variance-floor clips observed during training.
    pub variance_clips: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct Metrics {
    pub rmse: f64,
    pub nlpd: f64,
    pub coverage_95: f64,
}

/// Per-point predictive summary.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub lo95: Vec<f64>,
    pub hi95: Vec<f64>,
}

impl Prediction {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// Runs `config.epochs` of Adam over the model's loss. Full-batch by
/// default; with a batch size, each epoch shuffles the data and averages the
/// per-batch losses into the trace entry. Deterministic given the seed.
pub fn fit(model: &mut Model, data: &Dataset, config: &TrainConfig) -> std::result::Result<TrainingReport, FitError> {
    let started = Instant::now();
    if config.epochs == 0 {
        return Err(FitError {
            epoch: 0,
            source: Error::InvalidInput("epochs must be at least 1".into()),
        });
    }
    if data.is_empty() {
        return Err(FitError {
            epoch: 0,
            source: Error::InvalidInput("training data is empty".into()),
        });
    }

    let ids = model.trainable_ids();
    let mut adam = AdamState::new(config.lr);
    let mut rng = RngState::new(config.seed);
    let mut trace = Vec::with_capacity(config.epochs);
    let mut max_jitter = 0.0f64;
    let mut clips = 0u64;

    for epoch in 0..config.epochs {
        let epoch_loss = match config.batch_size {
            None => train_step(model, &data.x, &data.y, &mut rng, &mut adam, &ids)
                .map_err(|source| FitError { epoch, source })
                .map(|(loss, jitter, c)| {
                    max_jitter = max_jitter.max(jitter);
                    clips += c;
                    loss
                })?,
            Some(b) => {
                let b = b.max(1).min(data.len());
                let mut order: Vec<usize> = (0..data.len()).collect();
                rng.shuffle(&mut order);
                let mut total = 0.0;
                let mut batches = 0usize;
                for chunk in order.chunks(b) {
                    let batch = data.subset(chunk);
                    let (loss, jitter, c) =
                        train_step(model, &batch.x, &batch.y, &mut rng, &mut adam, &ids)
                            .map_err(|source| FitError { epoch, source })?;
                    max_jitter = max_jitter.max(jitter);
                    clips += c;
                    total += loss;
                    batches += 1;
                }
                total / batches as f64
            }
        };
        trace.push(epoch_loss);
    }

    let final_loss = *trace.last().unwrap();
    let prediction = predict(model, &data.x, config).map_err(|source| FitError {
        epoch: config.epochs - 1,
        source,
    })?;
    let y: Vec<f64> = (0..data.len()).map(|i| data.y.get(i, 0)).collect();
    let metrics = metrics(&prediction, &y).map_err(|source| FitError {
        epoch: config.epochs - 1,
        source,
    })?;

    Ok(TrainingReport {
        loss_trace: trace,
        final_loss,
        metrics,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        max_jitter,
        variance_clips: clips,
    })
}

/// One gradient step; returns the loss value and the step's diagnostics.
fn train_step(
    model: &mut Model,
    x: &Matrix,
    y: &Matrix,
    rng: &mut RngState,
    adam: &mut AdamState,
    ids: &[crate::autodiff::ParamId],
) -> Result<(f64, f64, u64)> {
    let mut tape = Tape::new();
    let loss = model.loss_on_tape(&mut tape, x, y, rng)?;
    let value = tape.value(loss).scalar_value();
    let grads = tape.backward(loss)?;
    model.params.zero_grads();
    grads.accumulate_into(&mut model.params);
    adam.step(&mut model.params, ids);
    Ok((
        value,
        tape.diagnostics.max_jitter,
        tape.diagnostics.variance_clips,
    ))
}

/// Monte-Carlo prediction over the stochastic layers composed with the
/// terminal noise model.
///
/// Each pass propagates one reparameterized sample through the non-terminal
/// stochastic layers; a terminal GP contributes analytic marginals and a
/// Gaussian head contributes its decoded mean and variance. The predictive
/// mean and variance are the mixture moments over passes, with the
/// likelihood noise variance added for ELBO models; intervals are
/// `mean +/- 1.96 sqrt(variance)`. Models without non-terminal stochastic
/// layers are exact in one pass.
pub fn predict(model: &Model, x_star: &Matrix, config: &TrainConfig) -> Result<Prediction> {
    let n = x_star.rows();
    if n == 0 {
        return Ok(Prediction {
            mean: Vec::new(),
            variance: Vec::new(),
            lo95: Vec::new(),
            hi95: Vec::new(),
        });
    }
    let passes = if model.has_nonterminal_stochastic() {
        config.mc_samples_predict.max(1)
    } else {
        1
    };
    let mut rng = RngState::new(config.seed);

    let mut sum_mean = vec![0.0; n];
    let mut sum_second = vec![0.0; n]; // E[v + m^2] accumulator
    for _ in 0..passes {
        let mut t = Tape::new();
        let vx = t.constant(x_star.clone());
        let (mean_m, var_m): (Matrix, Matrix) =
            match model.forward_on_tape(&mut t, vx, &mut rng, ForwardMode::Sample)? {
                StackOutput::Point(v) => {
                    let m = t.value(v).clone();
                    let z = Matrix::zeros(m.rows(), m.cols());
                    (m, z)
                }
                StackOutput::HeadRaw(raw) => {
                    let (mean, std) = GaussianHead.decode(&mut t, raw);
                    let var = t.square(std);
                    (t.value(mean).clone(), t.value(var).clone())
                }
                StackOutput::GpMarginals { mean, variance } => {
                    (t.value(mean).clone(), t.value(variance).clone())
                }
            };
        if mean_m.cols() != 1 {
            return Err(Error::InvalidModel(
                "prediction expects a single output column".into(),
            ));
        }
        for i in 0..n {
            let m = mean_m.get(i, 0);
            sum_mean[i] += m;
            sum_second[i] += var_m.get(i, 0) + m * m;
        }
    }

    let noise = model
        .likelihood
        .as_ref()
        .map(|l| l.noise_variance_value(&model.params))
        .unwrap_or(0.0);

    let p = passes as f64;
    let mut mean = Vec::with_capacity(n);
    let mut variance = Vec::with_capacity(n);
    let mut lo95 = Vec::with_capacity(n);
    let mut hi95 = Vec::with_capacity(n);
    for i in 0..n {
        let m = sum_mean[i] / p;
        let v = (sum_second[i] / p - m * m).max(0.0) + noise;
        mean.push(m);
        variance.push(v);
        lo95.push(m - Z_95 * v.sqrt());
        hi95.push(m + Z_95 * v.sqrt());
    }
    Ok(Prediction {
        mean,
        variance,
        lo95,
        hi95,
    })
}

/// Root mean squared error, mean negative log predictive density, and the
/// fraction of targets inside the 95% intervals.
pub fn metrics(pred: &Prediction, y: &[f64]) -> Result<Metrics> {
    if y.is_empty() || pred.is_empty() {
        return Err(Error::InvalidInput("metrics need at least one point".into()));
    }
    if y.len() != pred.len() {
        return Err(Error::InvalidInput(format!(
            "prediction length {} vs target length {}",
            pred.len(),
            y.len()
        )));
    }
    let n = y.len() as f64;
    let mut sse = 0.0;
    let mut nlpd = 0.0;
    let mut covered = 0usize;
    for (i, &target) in y.iter().enumerate() {
        let r = target - pred.mean[i];
        sse += r * r;
        // variance floor keeps the density finite for point predictions
        let v = pred.variance[i].max(VARIANCE_FLOOR);
        nlpd += 0.5 * (2.0 * std::f64::consts::PI * v).ln() + r * r / (2.0 * v);
        if target >= pred.lo95[i] && target <= pred.hi95[i] {
            covered += 1;
        }
    }
    Ok(Metrics {
        rmse: (sse / n).sqrt(),
        nlpd: nlpd / n,
        coverage_95: covered as f64 / n,
    })
}
