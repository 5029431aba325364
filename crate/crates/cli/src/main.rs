use std::path::PathBuf;
use std::process::ExitCode;

use amf_core::data::SynthSpec;
use amf_core::gibs::ModelRegistry;
use amf_core::pipeline::{run_dims, run_pipeline, run_synth, Overrides, RunConfig};
use amf_core::Error;
use chrono::NaiveDate;
use clap::{Parser, Subcommand, ValueEnum};

/// Adaptive multi-factor analysis of the low-volatility anomaly.
#[derive(Debug, Parser)]
#[command(name = "gibs-amf", version)]
struct Cli {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Directory with returns.csv, meta.csv and factors.csv.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true, value_name = "DATE")]
    eval_start: Option<NaiveDate>,
    #[arg(long, global = true, value_name = "DATE")]
    eval_end: Option<NaiveDate>,
    /// Maximum penalized LASSO support.
    #[arg(long, global = true)]
    lasso_cap: Option<usize>,
    /// Correlation-distance cut for both clustering stages.
    #[arg(long, global = true)]
    cluster_threshold: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    /// Configured (or default) synthetic spec.
    Config,
    /// Bond-loading low-volatility stocks against materials and health loading
    /// high-volatility stocks.
    Anomaly,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with known factor structure.
    Synth {
        #[arg(long, value_enum, default_value = "config")]
        preset: Preset,
    },
    /// Run portfolios, rolling model fits and the report.
    Run {
        /// Stop after writing the portfolio files.
        #[arg(long)]
        portfolios_only: bool,
    },
    /// Track basis dimensions over the evaluation period.
    Dims,
}

/// Bad inputs or environment exit with 2; numerical failures with 1.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Window { source, .. } => exit_code(source),
        Error::Data(_)
        | Error::Portfolio(_)
        | Error::Config(_)
        | Error::UnknownModel(_)
        | Error::Io { .. }
        | Error::Serde(_)
        | Error::Csv(_) => 2,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_json_file(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides {
        data_dir: cli.data.clone(),
        out_dir: cli.out.clone(),
        seed: cli.seed,
        eval_start: cli.eval_start,
        eval_end: cli.eval_end,
        lasso_cap: cli.lasso_cap,
        cluster_threshold: cli.cluster_threshold,
    });
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(Error::Config("--jobs must be positive".into()));
        }
        pool = pool.num_threads(j);
    }
    pool.build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    match cli.command {
        Command::Synth { preset } => {
            if let Preset::Anomaly = preset {
                cfg.synth = SynthSpec::low_vol_anomaly();
            }
            for f in run_synth(&cfg)? {
                log::info!("wrote {}", f.display());
            }
        }
        Command::Run { portfolios_only } => {
            let out = run_pipeline(&cfg, &ModelRegistry::with_defaults(), portfolios_only)?;
            let s = &out.summary;
            log::info!(
                "{} of {} weeks completed; outputs in {}",
                s.completed_weeks,
                s.eval_weeks,
                cfg.out_dir.display()
            );
            if !s.failures.is_empty() {
                log::warn!("{} weeks failed, see summary.json", s.failures.len());
            }
        }
        Command::Dims => {
            let rows = run_dims(&cfg)?;
            log::info!("wrote {} dimension rows", rows.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GIBS_AMF_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = e.to_string();
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                let part = s.to_string();
                if !msg.contains(&part) {
                    msg.push_str(": ");
                    msg.push_str(&part);
                }
                src = s.source();
            }
            log::error!("{msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}
