#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Experiment harness for the `oufield` toolkit: configuration, subcommand
//! pipelines, result records and deterministic parallel execution.

pub mod commands;
pub mod config;
pub mod error;
pub mod record;

use std::path::PathBuf;

pub use commands::Command;
pub use config::ExperimentConfig;
pub use error::HarnessError;
pub use record::{MetricRow, Output, ResultRecord, Status, Table};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "OUFIELD_OUT_DIR";

/// Exit status when a run completed but some verdict failed.
pub const EXIT_VERDICT_FAILURE: i32 = 2;

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Overrides the configured worker count.
    pub workers: Option<usize>,
    pub verbose: bool,
}

/// Runs one subcommand on a dedicated thread pool and assembles its record.
pub fn run(cmd: Command, cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Output, HarnessError> {
    cfg.validate()?;
    let workers = opts
        .workers
        .or(cfg.workers)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build()?;
    let ctx = commands::Ctx {
        cfg,
        spec: cfg.spectrum_spec()?,
        verbose: opts.verbose,
    };
    let (rows, tables) = pool.install(|| commands::dispatch(cmd, &ctx))?;
    let canonical = serde_json::to_string(cfg)?;
    let inputs = format!("oufield {}\n{}\n{}", env!("CARGO_PKG_VERSION"), cmd.as_str(), canonical);
    Ok(Output {
        record: ResultRecord::new(
            cmd.as_str(),
            cfg.digest(),
            record::content_hash(inputs.as_bytes()),
            rows,
        ),
        tables,
    })
}

/// Output directory: explicit flag, then environment, then config, then
/// `results`.
pub fn resolve_out_dir(flag: Option<PathBuf>, cfg: &ExperimentConfig) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("results"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_beats_config_for_output_directory() {
        let mut cfg =
            ExperimentConfig::from_toml_str("seed = 1\n[spectrum]\nfamily = \"power_law\"\na = 1.0\nalpha = 0.25\n")
                .unwrap();
        cfg.out_dir = Some("from_config".into());
        assert_eq!(resolve_out_dir(Some("flag".into()), &cfg), PathBuf::from("flag"));
    }

    #[test]
    fn record_hashes_are_stable() {
        let cfg =
            ExperimentConfig::from_toml_str("seed = 1\n[spectrum]\nfamily = \"power_law\"\na = 1.0\nalpha = 0.25\n")
                .unwrap();
        let a = run(Command::SpectrumCheck, &cfg, &RunOptions::default()).unwrap();
        let b = run(
            Command::SpectrumCheck,
            &cfg,
            &RunOptions {
                workers: Some(2),
                verbose: false,
            },
        )
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.record.input_hash.len(), 64);
    }
}
