//! The bundled synthetic generator and the CSV formats.
//!
//! All numeric CSV output uses Rust's shortest round-trip float formatting,
//! so byte-identical files mean identical numbers and vice versa.

use std::path::Path;

use hbnn_core::numerics::{Matrix, RngState};
use hbnn_core::training::{Dataset, Prediction};

use crate::CliError;

/// Noisy observation of the bundled regression task at input `x`:
/// `y = 0.6 sin(4 pi x) + 0.3 x + eps`, `eps ~ N(0, (0.05 + 0.3 x)^2)`.
/// The noise scale grows with `x`, so the task is heteroscedastic.
pub fn synthetic_target(x: f64, rng: &mut RngState) -> f64 {
    let mean = 0.6 * (4.0 * std::f64::consts::PI * x).sin() + 0.3 * x;
    let std = 0.05 + 0.3 * x;
    mean + std * rng.standard_normal()
}

/// `n` draws with `x ~ U[0, 1)`, deterministic in the seed.
pub fn generate(n: usize, seed: u64) -> Result<Dataset, CliError> {
    if n < 10 {
        return Err(CliError::Config(format!(
            "the generator needs n >= 10, got {n}"
        )));
    }
    let mut rng = RngState::new(seed);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x = rng.next_f64();
        xs.push(x);
        ys.push(synthetic_target(x, &mut rng));
    }
    Dataset::new(Matrix::column(&xs), Matrix::column(&ys))
        .map_err(|e| CliError::Config(e.to_string()))
}

pub fn write_dataset_csv(path: &Path, data: &Dataset) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CliError::Config(format!("cannot write {path:?}: {e}")))?;
    w.write_record(["x", "y"]).map_err(csv_err)?;
    for i in 0..data.len() {
        w.write_record([
            format!("{}", data.x.get(i, 0)),
            format!("{}", data.y.get(i, 0)),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::Config(e.to_string()))
}

pub fn read_dataset_csv(path: &Path) -> Result<Dataset, CliError> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| CliError::Config(format!("cannot read {path:?}: {e}")))?;
    {
        let headers = r.headers().map_err(csv_err)?;
        if headers.len() < 2 || &headers[0] != "x" || &headers[1] != "y" {
            return Err(CliError::Config(format!(
                "{path:?} must start with an `x,y` header, got {headers:?}"
            )));
        }
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let parse = |field: &str, name: &str| {
            field.parse::<f64>().map_err(|_| {
                CliError::Config(format!(
                    "{path:?} row {}: {name} value {field:?} is not a number",
                    line + 2
                ))
            })
        };
        xs.push(parse(&record[0], "x")?);
        ys.push(parse(&record[1], "y")?);
    }
    Dataset::new(Matrix::column(&xs), Matrix::column(&ys))
        .map_err(|e| CliError::Config(e.to_string()))
}

pub fn write_loss_trace_csv(path: &Path, trace: &[f64]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CliError::Config(format!("cannot write {path:?}: {e}")))?;
    w.write_record(["epoch", "loss"]).map_err(csv_err)?;
    for (epoch, loss) in trace.iter().enumerate() {
        w.write_record([format!("{epoch}"), format!("{loss}")])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::Config(e.to_string()))
}

pub fn write_predictions_csv(
    path: &Path,
    xs: &[f64],
    pred: &Prediction,
) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CliError::Config(format!("cannot write {path:?}: {e}")))?;
    w.write_record(["x", "pred_mean", "pred_var", "lo95", "hi95"])
        .map_err(csv_err)?;
    for (i, x) in xs.iter().enumerate() {
        w.write_record([
            format!("{x}"),
            format!("{}", pred.mean[i]),
            format!("{}", pred.variance[i]),
            format!("{}", pred.lo95[i]),
            format!("{}", pred.hi95[i]),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::Config(e.to_string()))
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Config(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generator_is_seed_deterministic() {
        let a = generate(50, 9).unwrap();
        let b = generate(50, 9).unwrap();
        assert_eq!(a.x.data(), b.x.data());
        assert_eq!(a.y.data(), b.y.data());
        let c = generate(50, 10).unwrap();
        assert!(a.y.data() != c.y.data());
    }

    #[test]
    fn generator_rejects_tiny_n() {
        assert!(generate(9, 0).is_err());
        assert!(generate(10, 0).is_ok());
    }

    #[test]
    fn noise_scale_at_origin() {
        // At x = 0 the noise std is 0.05; check the sample std over 1e4
        // draws lands inside [0.045, 0.055].
        let mut rng = RngState::new(4);
        let n = 10_000;
        let mean_fn = 0.0; // 0.6 sin(0) + 0.3 * 0
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let y = synthetic_target(0.0, &mut rng) - mean_fn;
            sum += y;
            sum_sq += y * y;
        }
        let mean = sum / n as f64;
        let std = (sum_sq / n as f64 - mean * mean).sqrt();
        assert!((0.045..=0.055).contains(&std), "sample std {std}");
    }

    #[test]
    fn dataset_csv_roundtrip() {
        let dir = std::env::temp_dir().join(format!("hbnn_ds_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("data.csv");
        let data = generate(25, 3).unwrap();
        write_dataset_csv(&path, &data).unwrap();
        let back = read_dataset_csv(&path).unwrap();
        assert_eq!(back.x.data(), data.x.data());
        assert_eq!(back.y.data(), data.y.data());
        // header + 25 rows
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 26);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn bad_csv_is_a_config_error() {
        let dir = std::env::temp_dir().join(format!("hbnn_badcsv_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.csv");
        std::fs::write(&path, "a,b\n1,2\n").unwrap();
        assert!(matches!(
            read_dataset_csv(&path),
            Err(CliError::Config(_))
        ));
        std::fs::write(&path, "x,y\n1,notanumber\n").unwrap();
        assert!(matches!(
            read_dataset_csv(&path),
            Err(CliError::Config(_))
        ));
        std::fs::remove_dir_all(&dir).ok();
    }
}
