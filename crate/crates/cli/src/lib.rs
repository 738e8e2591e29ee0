//! Experiment driver behind the `pacsnoc` binary.
//!
//! Every command reads an [`ExperimentConfig`] and writes into its
//! `output_dir`:
//!
//! | command    | files                                                        |
//! |------------|--------------------------------------------------------------|
//! | `gen-data` | `dataset.json`, `config.toml`                                |
//! | `train`    | `checkpoint.json`, `samples.json`, `metrics.csv`, method extras (`grid.csv`, `flow.json`) |
//! | `bound`    | `bounds.csv` (one row per bound; two-stage adds `splits.csv`) |
//! | `evaluate` | `eval.csv`, `eval_summary.csv`                               |
//! | `select`   | `selected.json`, `selection.csv`                             |

pub mod commands;
pub mod config;

pub use config::ExperimentConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] pacsnoc::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// 3 for numerical failures, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
