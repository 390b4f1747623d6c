//! Batch front-end: one TOML config drives generation, validation, the cell
//! problem, the effective matrix, the audits and the random-walk checks.
//!
//! Exit codes: `0` success, `1` other failure, `2` invalid configuration or
//! medium, `3` solver non-convergence, `4` failed `--check`.

mod config;
mod pipeline;
mod report;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

pub use config::{
    AuditConfig, BoundsConfig, CheckConfig, GridConfig, MomentsConfig, MonteCarloConfig, RunConfig,
    SublinearityConfig, ThetaChoice,
};
pub use pipeline::{all_stages, evaluate_checks, run_stages, with_dependencies, CliError, Stage};
pub use report::{
    CheckOutcome, ErgodicReport, RunReport, SolveSummary, StageTiming, SublinearityReport,
    TimeChangeReport, SCHEMA_VERSION,
};

use crate::error::Error;
use pipeline::at;

#[derive(Debug, Parser)]
#[command(
    name = "ehom",
    version,
    about = "Homogenization of degenerate random media"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Master seed; overrides `seed` from the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Compare results against the `[check]` section and exit 4 on failure.
    #[arg(long, global = true)]
    pub check: bool,
    #[arg(long, global = true, env = "EH_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the coefficient field and write it as EHF1.
    Gen,
    /// Check the moment condition on the generated field.
    Validate,
    /// Solve the corrector equation and write CHI1.
    Solve,
    /// Effective matrix and variational bounds.
    Effective,
    /// Corrector sup-norm over a size sweep.
    Sublinearity,
    /// Maximal-inequality audit over a size sweep.
    Audit,
    /// Random walk, invariance principle, time change and ergodic averages.
    Simulate,
    /// Every stage the config enables.
    Run,
    /// Render a stored report.
    Report {
        path: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Md)]
        format: Format,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Md,
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Stage {
        stage: Stage::Config,
        source: Error::Config("--config is required".into()),
    })?;
    let mut cfg = at(Stage::Config, RunConfig::load(path))?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn render(
    path: &Path,
    format: Format,
    out: Option<&PathBuf>,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let report = at(Stage::Report, RunReport::load(path))?;
    let io = |e: std::io::Error| CliError::Stage {
        stage: Stage::Report,
        source: e.into(),
    };
    match format {
        Format::Json => stdout
            .write_all(at(Stage::Report, report.to_json())?.as_bytes())
            .map_err(io),
        Format::Md => stdout
            .write_all(report.to_markdown().as_bytes())
            .map_err(io),
        Format::Csv => {
            let dir = out
                .cloned()
                .or_else(|| path.parent().map(PathBuf::from))
                .unwrap_or_default();
            for p in at(Stage::Report, report.write_csvs(&dir))? {
                writeln!(stdout, "{}", p.display()).map_err(io)?;
            }
            Ok(())
        }
    }
}

/// Runs one parsed command, writing human-readable output to `stdout`.
pub fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    if let Command::Report { path, format } = &cli.command {
        return render(path, *format, cli.out.as_ref(), stdout);
    }
    let cfg = load_config(cli)?;
    let stages = match cli.command {
        Command::Gen => vec![Stage::Gen],
        Command::Validate => vec![Stage::Validate],
        Command::Solve => vec![Stage::Solve],
        Command::Effective => vec![Stage::Effective],
        Command::Sublinearity => vec![Stage::Sublinearity],
        Command::Audit => vec![Stage::Audit],
        Command::Simulate => vec![Stage::Simulate],
        Command::Run => all_stages(&cfg),
        Command::Report { .. } => unreachable!("handled above"),
    };
    if stages.contains(&Stage::Sublinearity) && cfg.sublinearity.is_none()
        || stages.contains(&Stage::Audit) && cfg.audit.is_none()
        || stages.contains(&Stage::Simulate) && cfg.montecarlo.is_none()
    {
        return Err(CliError::Stage {
            stage: Stage::Config,
            source: Error::Config("the requested stage has no section in the config".into()),
        });
    }
    let threads = cli.threads.unwrap_or(0);
    let pool = at(
        Stage::Config,
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(format!("--threads: {e}"))),
    )?;
    let out = cfg.output_dir.clone();
    let report = pool.install(|| run_stages(&cfg, &stages, &out, cli.check))?;
    let _ = stdout.write_all(report.to_markdown().as_bytes());
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let mut stdout = std::io::stdout().lock();
    match execute(&cli, &mut stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
