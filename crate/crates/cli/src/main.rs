use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pacsnoc_cli::commands::{self, TEST_SEED_OFFSET};
use pacsnoc_cli::config::LambdaSetting;
use pacsnoc_cli::{CliError, ExperimentConfig};

/// PAC-Bayesian controller synthesis experiments.
#[derive(Parser, Debug)]
#[command(name = "pacsnoc", version)]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of training sequences.
    #[arg(long, global = true)]
    s: Option<usize>,
    #[arg(long, global = true)]
    horizon: Option<usize>,
    #[arg(long, global = true)]
    delta: Option<f64>,
    /// A number, or `lambda_star`.
    #[arg(long, global = true)]
    lambda: Option<String>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    learning_rate: Option<f64>,
    #[arg(long, global = true)]
    n_p: Option<usize>,
    #[arg(long, global = true)]
    n_q: Option<usize>,
    #[arg(long, global = true)]
    s1: Option<usize>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw the training dataset.
    GenData,
    /// Train with the configured method.
    Train,
    /// Compute bounds for the configured method.
    Bound {
        /// Dataset sizes for a sweep over prefixes (grid method).
        #[arg(long, value_delimiter = ',')]
        sweep: Option<Vec<usize>>,
    },
    /// Evaluate a checkpoint on fresh test sequences.
    Evaluate {
        /// Defaults to `<output_dir>/checkpoint.json`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        n_test: Option<usize>,
        /// Test-set seed; defaults to a stream disjoint from the training data.
        #[arg(long = "test-seed")]
        test_seed: Option<u64>,
    },
    /// Bootstrap selection among the trained posterior samples.
    Select {
        #[arg(long)]
        resamples: Option<usize>,
    },
}

fn apply_overrides(cli: &Cli, cfg: &mut ExperimentConfig) -> Result<(), CliError> {
    if let Some(v) = cli.seed {
        cfg.seed = v;
    }
    if let Some(v) = cli.s {
        cfg.s = v;
    }
    if let Some(v) = cli.horizon {
        cfg.horizon = v;
    }
    if let Some(v) = cli.delta {
        cfg.delta = v;
    }
    if let Some(v) = &cli.lambda {
        cfg.lambda = if v == "lambda_star" {
            LambdaSetting::default()
        } else {
            LambdaSetting::Value(
                v.parse()
                    .map_err(|_| CliError::Config(format!("--lambda expects a number or lambda_star, got {v}")))?,
            )
        };
    }
    if let Some(v) = cli.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = cli.learning_rate {
        cfg.train.learning_rate = v;
    }
    if let Some(v) = cli.n_p {
        cfg.n_p = v;
    }
    if let Some(v) = cli.n_q {
        cfg.n_q = v;
    }
    if let Some(v) = cli.s1 {
        cfg.two_stage.s1 = Some(v);
    }
    if let Some(v) = &cli.output_dir {
        cfg.output_dir = v.clone();
    }
    Ok(())
}

fn init_threads() -> Result<(), CliError> {
    if let Ok(raw) = std::env::var("PACSNOC_THREADS") {
        let n: usize = raw
            .parse()
            .map_err(|_| CliError::Config(format!("PACSNOC_THREADS must be a positive integer, got {raw}")))?;
        if n == 0 {
            return Err(CliError::Config("PACSNOC_THREADS must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    let path = cli
        .config
        .clone()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(&path)?;
    apply_overrides(&cli, &mut cfg)?;
    match cli.command {
        Command::GenData => {
            let out = commands::gen_data(&cfg)?;
            println!("wrote {} sequences to {}", cfg.s, out.display());
        }
        Command::Train => {
            let s = commands::train(&cfg)?;
            match s.lambda {
                Some(l) => println!("method {} lambda {l:.6}: {} posterior samples", s.method, s.samples),
                None => println!("method {}", s.method),
            }
            println!("checkpoint: {} parameters", s.checkpoint.theta.len());
        }
        Command::Bound { sweep } => {
            if let Some(sw) = sweep {
                cfg.sweep = sw;
            }
            for r in commands::bound(&cfg)? {
                println!(
                    "{:?} S={} lambda={:.4}: upper {:.6} lower {:.6} (each side w.p. >= {}, jointly w.p. >= {})",
                    r.method, r.s, r.lambda, r.upper, r.lower, r.per_side_validity, r.joint_validity
                );
            }
        }
        Command::Evaluate {
            checkpoint,
            n_test,
            test_seed,
        } => {
            let ck = checkpoint.unwrap_or_else(|| cfg.output_dir.join("checkpoint.json"));
            let n = n_test.unwrap_or(cfg.n_test);
            let seed = test_seed.unwrap_or(cfg.seed + TEST_SEED_OFFSET);
            let s = commands::evaluate(&cfg, &ck, n, seed)?;
            println!(
                "{} test sequences: raw {:.6}, transformed {:.6}, collisions {:.1}%",
                s.n_test, s.mean_raw_cost, s.mean_transformed_cost, s.collision_percent
            );
        }
        Command::Select { resamples } => {
            if let Some(b) = resamples {
                cfg.bootstrap_resamples = b;
            }
            let s = commands::select(&cfg)?;
            println!(
                "selected candidate {} of {}; bound it with delta' = {}",
                s.selected, s.candidates, s.delta_prime
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
