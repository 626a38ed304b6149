//! `flowmoe` command-line tool.
//!
//! Every run parameter lives in the config file; flags pick the config, the
//! seed and the output location. Set `FLOWMOE_THREADS` to cap worker threads.
//! Failures print one `error[<kind>]: <message>` line to stderr and exit 1.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flowmoe::config::RunConfig;
use flowmoe::pipeline;
use flowmoe::Error;

#[derive(Parser)]
#[command(name = "flowmoe", version, about = "Drift-robust malicious flow detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file; defaults are used for anything it leaves out.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, short, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic benchmark to CSV.
    Synth(Common),
    /// Train the experts and the gate.
    Train(Common),
    /// Run the ablation grid over the drift scenarios.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Trained model to use for the full MalMoE variant.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Score a flow CSV with a trained model.
    Detect {
        model: PathBuf,
        flows: PathBuf,
        /// Config supplying the CSV schema and window length.
        #[arg(long, short)]
        config: Option<PathBuf>,
        /// Output CSV.
        #[arg(long, short, default_value = "predictions.csv")]
        out: PathBuf,
    },
    /// Measure construction and inference throughput.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> flowmoe::Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    Ok(cfg)
}

fn configure_threads() -> flowmoe::Result<()> {
    let Ok(raw) = std::env::var("FLOWMOE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidArgument(format!("FLOWMOE_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidArgument(e.to_string()))
}

fn run(cli: Cli) -> flowmoe::Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Synth(c) => {
            let cfg = load_config(c.config.as_deref(), c.seed)?;
            pipeline::cmd_synth(&cfg, &c.out)?;
            println!("wrote {}", c.out.display());
        }
        Command::Train(c) => {
            let cfg = load_config(c.config.as_deref(), c.seed)?;
            let outcome = pipeline::cmd_train(&cfg, &c.out)?;
            println!("wrote {}", outcome.model_path.display());
        }
        Command::Eval { common: c, model } => {
            let cfg = load_config(c.config.as_deref(), c.seed)?;
            let result = pipeline::cmd_eval(&cfg, model.as_deref(), &c.out)?;
            for row in result.rows.iter().filter(|r| r.scenario.is_none()) {
                println!("{:<18} acc={:.4} f1={:.4}", row.variant.name(), row.metrics.acc, row.metrics.f1);
            }
        }
        Command::Detect {
            model,
            flows,
            config,
            out,
        } => {
            let cfg = load_config(config.as_deref(), None)?;
            let n = pipeline::cmd_detect(&model, &flows, &out, &cfg.data.schema, cfg.data.window_secs)?;
            println!("scored {n} flows into {}", out.display());
        }
        Command::Bench { common: c, model } => {
            let cfg = load_config(c.config.as_deref(), c.seed)?;
            let report = pipeline::cmd_bench(&cfg, model.as_deref(), &c.out)?;
            print!("{}", report.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.kind(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
