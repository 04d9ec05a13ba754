use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hbnn_cli::commands::{
    cmd_compare, cmd_generate_data, cmd_gradcheck, cmd_predict, cmd_train, parse_grid,
};
use hbnn_cli::config::{KernelEntry, RunConfig, PRESETS};
use hbnn_cli::CliError;

/// Train hybrid neural-network / Gaussian-process regression models and
/// emit predictions with 95% uncertainty intervals.
#[derive(Parser)]
#[command(name = "hbnn", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the bundled heteroscedastic 1-D regression task to CSV.
    GenerateData {
        /// Number of rows (at least 10).
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model and write model_summary.json plus loss_trace.csv.
    Train(ModelArgs),
    /// Evaluate a trained model directory on a grid of inputs.
    Predict {
        /// Directory containing model_summary.json from a previous train.
        #[arg(long)]
        model_dir: PathBuf,
        /// Evaluation grid as min,max,count; the min may be negative.
        #[arg(long, allow_hyphen_values = true)]
        grid: String,
        /// Monte-Carlo samples for the predictive moments.
        #[arg(long)]
        mc_samples: Option<usize>,
    },
    /// Train every preset (or a comma-separated subset) on identical data
    /// and seed, writing comparison.json and per-preset artifacts.
    Compare {
        #[command(flatten)]
        model: ModelArgs,
        /// Comma-separated preset names; all six when absent.
        #[arg(long)]
        presets: Option<String>,
    },
    /// Run the finite-difference gradient suite; exit 0 only if all pass.
    Gradcheck,
}

#[derive(Args)]
struct ModelArgs {
    /// Preset name: dnn, hbnn-replace, hbnn-append, hfbnn, hfbnn-deep,
    /// hfbnn-arccosine.
    #[arg(long)]
    preset: Option<String>,
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// "gen" for the bundled generator or a path to an x,y CSV.
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    num_inducing: Option<usize>,
    /// Kernel for GP layers: squared_exponential, arc_cosine, polynomial.
    #[arg(long)]
    kernel: Option<String>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    mc_samples: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ModelArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(p) = &self.preset {
            config.preset = Some(p.clone());
            config.layers = None;
        }
        if let Some(d) = &self.data {
            config.data = d.clone();
        }
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if let Some(e) = self.epochs {
            config.epochs = e;
        }
        if let Some(lr) = self.lr {
            config.lr = Some(lr);
        }
        if let Some(m) = self.num_inducing {
            config.num_inducing = m;
        }
        if let Some(k) = &self.kernel {
            config.kernel = KernelEntry {
                name: Some(k.clone()),
                ..config.kernel
            };
        }
        if let Some(b) = self.batch_size {
            config.batch_size = Some(b);
        }
        if let Some(mc) = self.mc_samples {
            config.mc_samples = mc;
        }
        if let Some(out) = &self.out {
            config.out = out.clone();
        }
        Ok(config)
    }
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::GenerateData { n, seed, out } => {
            cmd_generate_data(n, seed, &out)?;
            Ok(0)
        }
        Command::Train(args) => {
            let config = args.resolve()?;
            cmd_train(&config)?;
            Ok(0)
        }
        Command::Predict {
            model_dir,
            grid,
            mc_samples,
        } => {
            let grid = parse_grid(&grid)?;
            cmd_predict(&model_dir, grid, mc_samples)?;
            Ok(0)
        }
        Command::Compare { model, presets } => {
            let config = model.resolve()?;
            let presets: Vec<String> = match presets {
                Some(list) => list.split(',').map(|s| s.trim().to_string()).collect(),
                None => PRESETS.iter().map(|s| s.to_string()).collect(),
            };
            let out = config.out.clone();
            cmd_compare(&config, &presets, &out)?;
            Ok(0)
        }
        Command::Gradcheck => {
            let passed = cmd_gradcheck()?;
            Ok(if passed { 0 } else { 1 })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
