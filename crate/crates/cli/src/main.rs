use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use drmksd::estimator::Variant;
use drmksd::io::{read_dataset_file, write_dataset};
use drmksd_cli::config::ExperimentConfig;
use drmksd_cli::harness::{self, with_output};
use drmksd_cli::{CliError, EXIT_OK};

#[derive(Parser, Debug)]
#[command(name = "drmksd", version, about = "Doubly robust MKSD simulations and fits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output path; stdout when omitted (replicate defaults to the config's `output`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; falls back to DRMKSD_THREADS.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum VariantArg {
    Dr,
    Ipw,
    Pi,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Dr => Variant::Dr,
            VariantArg::Ipw => Variant::Ipw,
            VariantArg::Pi => Variant::Pi,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a dataset and write it as CSV.
    Simulate(Common),
    /// Fit θ_n on a dataset (simulated from the config when --data is absent).
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run R replications and write per-replication rows plus a summary JSON.
    Replicate(Common),
    /// Evaluate g_n over the config's θ grid.
    Gridscan {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(v) = common.variant {
        cfg.variant = v.into();
    }
    cfg.resolve()
}

fn init_threads(common: &Common) -> Result<(), CliError> {
    let threads = match common.threads {
        Some(t) => Some(t),
        None => match std::env::var("DRMKSD_THREADS") {
            Ok(v) => Some(v.trim().parse().map_err(|_| CliError::usage(format!("DRMKSD_THREADS={v:?} is not a count")))?),
            Err(_) => None,
        },
    };
    if let Some(t) = threads {
        if t == 0 {
            return Err(CliError::usage("thread count must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::usage(format!("cannot start thread pool: {e}")))?;
    }
    Ok(())
}

fn json_line<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable output")
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(common) => {
            init_threads(&common)?;
            let cfg = load(&common)?;
            let ds = harness::simulate(&cfg, cfg.seed)?;
            with_output(common.out.as_deref(), |w| {
                write_dataset(&ds, w).map_err(|e| std::io::Error::other(e.to_string()))
            })
        }
        Command::Fit { common, data } => {
            init_threads(&common)?;
            let cfg = load(&common)?;
            let ds = match &data {
                Some(path) => read_dataset_file(path)?,
                None => harness::simulate(&cfg, cfg.seed)?,
            };
            let out = harness::fit(&cfg, &ds, cfg.seed)?;
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            with_output(common.out.as_deref(), |w| writeln!(w, "{}", json_line(&out)))
        }
        Command::Replicate(common) => {
            init_threads(&common)?;
            let cfg = load(&common)?;
            let out = common.out.clone().or_else(|| cfg.output.clone());
            let p = cfg.model()?.dim_theta();
            let (rows, summary) = harness::replicate(&cfg)?;
            with_output(out.as_deref(), |w| harness::write_results(&rows, p, w))?;
            let summary_path = out.as_ref().map(|o| o.with_extension("summary.json"));
            match summary_path {
                Some(path) => with_output(Some(&path), |w| writeln!(w, "{}", json_line(&summary))),
                None => {
                    eprintln!("{}", json_line(&summary));
                    Ok(())
                }
            }
        }
        Command::Gridscan { common, data } => {
            init_threads(&common)?;
            let cfg = load(&common)?;
            let ds = match &data {
                Some(path) => read_dataset_file(path)?,
                None => harness::simulate(&cfg, cfg.seed)?,
            };
            let scan = harness::gridscan(&cfg, &ds, cfg.seed)?;
            with_output(common.out.as_deref(), |w| harness::write_grid(&scan, w))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            let _ = writeln!(std::io::stdout(), "{}", json_line(&e));
            ExitCode::from(e.code as u8)
        }
    }
}
