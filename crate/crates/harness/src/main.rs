use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use oufield_cli::{resolve_out_dir, run, Command, ExperimentConfig, RunOptions, EXIT_VERDICT_FAILURE, OUT_DIR_ENV};

#[derive(Clone, Copy, Debug, ValueEnum)]
#[value(rename_all = "kebab-case")]
enum Sub {
    SpectrumCheck,
    SimulatePaths,
    MomentScan,
    QvPartition,
    QvRegularized,
    Theta,
    TensorQv,
    MehlerCheck,
    GeneratorCheck,
    ItoCheck,
    ApproxCheck,
    EvtTail,
    EvtNorming,
    EvtGumbel,
    EvtMoments,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Self {
        Command::ALL[s as usize]
    }
}

/// Run one oufield experiment and write CSV tables plus a verdict summary.
///
/// Exit status: 0 when every verdict passes, 2 when a numeric verdict fails,
/// 1 on configuration or I/O errors.
#[derive(Debug, Parser)]
#[command(name = "oufield", version)]
struct Cli {
    /// Experiment to run.
    #[arg(value_enum)]
    command: Sub,
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, env = OUT_DIR_ENV)]
    out: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, short)]
    verbose: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cmd = Command::from(cli.command);
    let result = (|| {
        let mut cfg = ExperimentConfig::load(&cli.config)?;
        if let Some(seed) = cli.seed {
            cfg.seed = seed;
        }
        let out = run(
            cmd,
            &cfg,
            &RunOptions {
                workers: cli.workers,
                verbose: cli.verbose,
            },
        )?;
        let dir = out.write(&resolve_out_dir(cli.out.clone(), &cfg))?;
        Ok::<_, oufield_cli::HarnessError>((out, dir))
    })();
    match result {
        Ok((out, dir)) => {
            for r in out.record.failures() {
                eprintln!("FAIL {}: value {} ({})", r.name, r.value, r.detail);
            }
            println!(
                "{} {}: {} rows, written to {}",
                if out.record.passed { "PASS" } else { "FAIL" },
                cmd,
                out.record.rows.len(),
                dir.display()
            );
            if out.record.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_VERDICT_FAILURE as u8)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
