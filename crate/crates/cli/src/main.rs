use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gatesid_cli::config::RunConfig;
use gatesid_cli::pipeline;
use gatesid_core::Error;

#[derive(Parser)]
#[command(name = "gatesid", version, about = "Cold-start ranking with gated semantic IDs")]
struct Cli {
    /// Flat key=value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one key; repeatable, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Shorthand for `--set seed=N`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print the resolved configuration as key=value lines and exit.
    #[arg(long)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus.
    GenData,
    /// Train the residual-quantized autoencoder on item content.
    TrainRqvae,
    /// Assign a semantic ID to every item.
    EncodeSids,
    /// Train one ranking-model variant.
    Train {
        #[arg(long)]
        variant: Option<String>,
    },
    /// Evaluate a trained variant on the held-out day.
    Eval {
        #[arg(long)]
        variant: Option<String>,
    },
    /// Train and evaluate every (variant, seed) cell.
    Ablate {
        /// Load cell checkpoints from a previous run instead of training.
        #[arg(long)]
        from_artifacts: bool,
    },
    /// Mean gate weight per item-age bin.
    GateCurve {
        #[arg(long)]
        variant: Option<String>,
    },
    /// Write item-id and SID embeddings as CSV.
    ExportEmb {
        #[arg(long)]
        variant: Option<String>,
    },
    /// Finite-difference check of the full loss on a toy model.
    GradCheck,
}

fn init_logging() -> Result<(), Error> {
    let level = match std::env::var("GATESID_LOG").as_deref() {
        Err(_) | Ok("info") => log::LevelFilter::Info,
        Ok("quiet") => log::LevelFilter::Off,
        Ok("debug") => log::LevelFilter::Debug,
        Ok(other) => return Err(Error::Config(format!("GATESID_LOG must be quiet, info or debug, got `{other}`"))),
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    Ok(())
}

fn run(cli: Cli) -> Result<Option<serde_json::Value>, Error> {
    init_logging()?;
    let mut overrides = cli.overrides;
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    let variant = match &cli.command {
        Some(
            Command::Train { variant } | Command::Eval { variant } | Command::GateCurve { variant } | Command::ExportEmb { variant },
        ) => variant.clone(),
        _ => None,
    };
    if let Some(v) = variant {
        overrides.push(format!("variant={v}"));
    }
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    if cli.print_config {
        for (k, v) in cfg.to_pairs()? {
            println!("{k}={v}");
        }
        return Ok(None);
    }
    let Some(command) = cli.command else {
        return Err(Error::Config("no subcommand given; see --help".into()));
    };
    let summary = match command {
        Command::GenData => pipeline::gen_data(&cfg)?,
        Command::TrainRqvae => pipeline::train_rqvae_cmd(&cfg)?,
        Command::EncodeSids => pipeline::encode_sids(&cfg)?,
        Command::Train { .. } => pipeline::train(&cfg)?,
        Command::Eval { .. } => pipeline::eval(&cfg)?,
        Command::Ablate { from_artifacts } => pipeline::ablate(&cfg, from_artifacts)?,
        Command::GateCurve { .. } => pipeline::gate_curve(&cfg)?,
        Command::ExportEmb { .. } => pipeline::export_emb(&cfg)?,
        Command::GradCheck => pipeline::grad_check(&cfg)?,
    };
    Ok(Some(summary))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(Some(summary)) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = if matches!(e, Error::MissingArtifact(_)) { 2 } else { 1 };
            println!("{}", serde_json::json!({ "status": "error", "exit_code": code, "error": e.to_string() }));
            ExitCode::from(code)
        }
    }
}
