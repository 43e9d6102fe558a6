use anyhow::Context;
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use vitalstream::canonical;
use vitalstream::harness::{self, ExportFormat, HarnessError, ScenarioConfig};
use vitalstream::model::WorkerId;
use vitalstream::store::Store;

#[derive(Parser)]
#[command(name = "vitalstream", version, about = "Run, export and generate vital-stream pipeline scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario end to end and print the report.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Multi-threaded run over real sockets instead of virtual time.
        #[arg(long)]
        smoke_tcp: bool,
    },
    /// Export one result series from a store log.
    Export {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        worker: String,
        #[arg(long)]
        metric: String,
        #[arg(long, default_value_t = 0)]
        from: u64,
        #[arg(long, default_value_t = u64::MAX)]
        to: u64,
        #[arg(long, default_value = "csv")]
        format: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump the raw synthetic streams of a scenario.
    Gen {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        dump: PathBuf,
    },
}

/// Failure class, mapped to the exit code.
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        if e.is_config() {
            Failure::Config(e.into())
        } else {
            Failure::Runtime(e.into())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run {
            scenario,
            out,
            seed,
            smoke_tcp,
        } => {
            let mut cfg = ScenarioConfig::load(&scenario)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let out = out.or_else(|| cfg.out_dir.clone());
            if smoke_tcp {
                let report = harness::run_smoke_tcp(&cfg, out.as_deref())?;
                println!("{}", canonical::encode_string(&report));
                if !report.conserved() {
                    return Err(Failure::Runtime(anyhow::anyhow!(
                        "smoke run lost or duplicated records"
                    )));
                }
            } else {
                let art = harness::run_scenario(&cfg, out.as_deref())?;
                println!("{}", canonical::encode_string(&art.report));
            }
        }
        Command::Export {
            store,
            worker,
            metric,
            from,
            to,
            format,
            out,
        } => {
            let worker = WorkerId::new(worker).map_err(|e| Failure::Config(e.into()))?;
            let format: ExportFormat = format.parse()?;
            if !store.exists() {
                return Err(Failure::Config(anyhow::anyhow!(
                    "store log {} does not exist",
                    store.display()
                )));
            }
            let s = Store::recover(&store)
                .with_context(|| format!("recovering {}", store.display()))
                .map_err(Failure::Runtime)?;
            let rows = harness::export_series(&s, &worker, &metric, from, to, format, &out)?;
            log::info!("wrote {rows} rows to {}", out.display());
        }
        Command::Gen { scenario, dump } => {
            let cfg = ScenarioConfig::load(&scenario)?;
            harness::dump_streams(&cfg, &dump)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("VITALSTREAM_LOG", "error")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
