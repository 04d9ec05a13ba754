//! Implementations of the CLI commands, kept binary-free so the test
//! suites can call them directly.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use hbnn_core::error::Error as CoreError;
use hbnn_core::oracle::gradcheck;
use hbnn_core::training::{build_model, fit, predict, Dataset, Model, TrainConfig, TrainingReport};

use crate::config::{RunConfig, GENERATED_N, GENERATED_SEED, PRESETS};
use crate::dataset;
use crate::CliError;

/// Contents of `model_summary.json`: the fully resolved run configuration
/// (enough to re-train the model deterministically) plus the outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub config: RunConfig,
    pub final_loss: f64,
    pub rmse: f64,
    pub nlpd: f64,
    pub coverage_95: f64,
    pub wall_clock_seconds: f64,
    pub max_jitter: f64,
    pub variance_clips: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ComparisonEntry {
    Ok {
        rmse: f64,
        nlpd: f64,
        coverage_95: f64,
        final_loss: f64,
        seconds: f64,
    },
    Failed {
        error: String,
    },
}

fn core_err(e: CoreError) -> CliError {
    match e {
        CoreError::InvalidModel(_) | CoreError::InvalidInput(_) | CoreError::ShapeMismatch(_) => {
            CliError::Config(e.to_string())
        }
        _ => CliError::Numeric(e.to_string()),
    }
}

pub fn load_data(config: &RunConfig) -> Result<Dataset, CliError> {
    if config.data == "gen" {
        dataset::generate(GENERATED_N, GENERATED_SEED)
    } else {
        dataset::read_dataset_csv(Path::new(&config.data))
    }
}

/// Builds and fits the configured model. Shared by train, predict (which
/// re-trains from the recorded configuration), and compare.
pub fn train_model(
    config: &RunConfig,
) -> Result<(Model, Dataset, TrainConfig, TrainingReport), CliError> {
    let spec = config.model_spec()?;
    let data = load_data(config)?;
    let train_config = config.train_config(spec.loss)?;
    let mut model = build_model(&spec, &data, config.seed).map_err(core_err)?;
    let report = fit(&mut model, &data, &train_config)
        .map_err(|e| CliError::Numeric(e.to_string()))?;
    Ok((model, data, train_config, report))
}

/// `generate-data`: writes the bundled heteroscedastic task to CSV.
pub fn cmd_generate_data(n: usize, seed: u64, out_path: &Path) -> Result<(), CliError> {
    let data = dataset::generate(n, seed)?;
    dataset::write_dataset_csv(out_path, &data)?;
    println!("wrote {} rows to {}", data.len(), out_path.display());
    Ok(())
}

/// `train`: fits the model and writes `model_summary.json` and
/// `loss_trace.csv` into the output directory.
pub fn cmd_train(config: &RunConfig) -> Result<TrainSummary, CliError> {
    let (_, _, _, report) = train_model(config)?;
    std::fs::create_dir_all(&config.out)
        .map_err(|e| CliError::Config(format!("cannot create {:?}: {e}", config.out)))?;

    dataset::write_loss_trace_csv(&config.out.join("loss_trace.csv"), &report.loss_trace)?;
    let summary = TrainSummary {
        config: config.clone(),
        final_loss: report.final_loss,
        rmse: report.metrics.rmse,
        nlpd: report.metrics.nlpd,
        coverage_95: report.metrics.coverage_95,
        wall_clock_seconds: report.wall_clock_seconds,
        max_jitter: report.max_jitter,
        variance_clips: report.variance_clips,
    };
    write_json(&config.out.join("model_summary.json"), &summary)?;
    println!(
        "trained {} for {} epochs: final loss {:.6}, rmse {:.4}, coverage95 {:.3} ({:.1}s)",
        summary
            .config
            .preset
            .as_deref()
            .unwrap_or("custom layer stack"),
        summary.config.epochs,
        summary.final_loss,
        summary.rmse,
        summary.coverage_95,
        summary.wall_clock_seconds,
    );
    Ok(summary)
}

/// `predict`: re-trains deterministically from the summary recorded in
/// `model_dir`, evaluates the grid, and writes `predictions.csv` there.
///
/// Model weights are deliberately not serialized; the summary plus seeded
/// determinism reproduce them exactly.
pub fn cmd_predict(
    model_dir: &Path,
    grid: (f64, f64, usize),
    mc_samples: Option<usize>,
) -> Result<PathBuf, CliError> {
    let summary_path = model_dir.join("model_summary.json");
    let text = std::fs::read_to_string(&summary_path).map_err(|e| {
        CliError::Config(format!(
            "missing model artifacts: cannot read {summary_path:?}: {e}"
        ))
    })?;
    let summary: TrainSummary = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("corrupt {summary_path:?}: {e}")))?;

    let (model, _, mut train_config, _) = train_model(&summary.config)?;
    if let Some(mc) = mc_samples {
        train_config.mc_samples_predict = mc;
    }

    let (lo, hi, count) = grid;
    let xs: Vec<f64> = (0..count)
        .map(|i| {
            if count == 1 {
                lo
            } else {
                lo + (hi - lo) * i as f64 / (count - 1) as f64
            }
        })
        .collect();
    let x_star = hbnn_core::numerics::Matrix::column(&xs);
    let prediction = predict(&model, &x_star, &train_config).map_err(core_err)?;

    let out = model_dir.join("predictions.csv");
    dataset::write_predictions_csv(&out, &xs, &prediction)?;
    println!("wrote {} predictions to {}", xs.len(), out.display());
    Ok(out)
}

/// `compare`: trains the requested presets on identical data and seed,
/// recording metrics per preset. Per-preset failures land in the JSON
/// without aborting the remaining presets.
pub fn cmd_compare(
    base: &RunConfig,
    presets: &[String],
    out_dir: &Path,
) -> Result<BTreeMap<String, ComparisonEntry>, CliError> {
    for p in presets {
        if !PRESETS.contains(&p.as_str()) {
            return Err(CliError::Config(format!(
                "unknown preset {p:?}; expected one of {}",
                PRESETS.join(", ")
            )));
        }
    }
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Config(format!("cannot create {out_dir:?}: {e}")))?;

    let mut results = BTreeMap::new();
    for preset in presets {
        let preset_dir = out_dir.join(preset);
        let config = RunConfig {
            preset: Some(preset.clone()),
            layers: None,
            loss: None,
            out: preset_dir.clone(),
            ..base.clone()
        };
        let entry = match run_one_comparison(&config, &preset_dir) {
            Ok(entry) => entry,
            Err(e) => ComparisonEntry::Failed {
                error: e.to_string(),
            },
        };
        match &entry {
            ComparisonEntry::Ok { rmse, coverage_95, .. } => println!(
                "{preset}: rmse {rmse:.4}, coverage95 {coverage_95:.3}"
            ),
            ComparisonEntry::Failed { error } => println!("{preset}: FAILED ({error})"),
        }
        results.insert(preset.clone(), entry);
    }
    write_json(&out_dir.join("comparison.json"), &results)?;
    Ok(results)
}

fn run_one_comparison(
    config: &RunConfig,
    preset_dir: &Path,
) -> Result<ComparisonEntry, CliError> {
    let (model, data, train_config, report) = train_model(config)?;
    std::fs::create_dir_all(preset_dir)
        .map_err(|e| CliError::Config(format!("cannot create {preset_dir:?}: {e}")))?;
    dataset::write_loss_trace_csv(&preset_dir.join("loss_trace.csv"), &report.loss_trace)?;

    // plot-ready predictions over the data range, extended by a quarter on
    // each side to show extrapolation behavior
    let (lo, hi) = data.input_range();
    let pad = 0.25 * (hi - lo);
    let count = 201;
    let xs: Vec<f64> = (0..count)
        .map(|i| (lo - pad) + (hi - lo + 2.0 * pad) * i as f64 / (count - 1) as f64)
        .collect();
    let x_star = hbnn_core::numerics::Matrix::column(&xs);
    let prediction = predict(&model, &x_star, &train_config).map_err(core_err)?;
    dataset::write_predictions_csv(&preset_dir.join("predictions.csv"), &xs, &prediction)?;

    Ok(ComparisonEntry::Ok {
        rmse: report.metrics.rmse,
        nlpd: report.metrics.nlpd,
        coverage_95: report.metrics.coverage_95,
        final_loss: report.final_loss,
        seconds: report.wall_clock_seconds,
    })
}

/// `gradcheck`: prints one line per component; the process exit code is 0
/// only when every component meets the tolerance.
pub fn cmd_gradcheck() -> Result<bool, CliError> {
    let report = gradcheck::run_all().map_err(core_err)?;
    println!(
        "finite-difference gradient check, tolerance {:.0e}:",
        gradcheck::TOLERANCE
    );
    for c in &report.components {
        println!(
            "  {:<28} max rel error {:.3e}  {}",
            c.name,
            c.max_rel_error,
            if c.passed() { "ok" } else { "FAIL" }
        );
    }
    Ok(report.passed())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Config(format!("serialization failed: {e}")))?;
    std::fs::write(path, text + "\n")
        .map_err(|e| CliError::Config(format!("cannot write {path:?}: {e}")))
}

/// Parses `min,max,count` grid descriptions.
pub fn parse_grid(s: &str) -> Result<(f64, f64, usize), CliError> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(CliError::Config(format!(
            "grid must be min,max,count, got {s:?}"
        )));
    }
    let lo: f64 = parts[0]
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("bad grid min {:?}", parts[0])))?;
    let hi: f64 = parts[1]
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("bad grid max {:?}", parts[1])))?;
    let count: usize = parts[2]
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("bad grid count {:?}", parts[2])))?;
    if count > 0 && hi < lo {
        return Err(CliError::Config("grid max must be >= min".into()));
    }
    Ok((lo, hi, count))
}
