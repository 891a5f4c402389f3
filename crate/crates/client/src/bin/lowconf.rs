use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use lowconf_client::{Client, ClientError, DEFAULT_SERVER};
use lowconf_core::api::{GenRequest, ScoreRequest, SubsetRequest};
use lowconf_core::pipeline::{SelectionParams, TIMINGS_FILE};
use lowconf_core::selection::SelectionMode;
use lowconf_core::synthetic::SyntheticSpec;
use lowconf_core::{ErrorClass, PipelineConfig, TransferConfig};

#[derive(Parser)]
#[command(
    name = "lowconf",
    version,
    about = "Train a selector once, select data anytime"
)]
struct Cli {
    /// Base URL of the lowconf-server instance.
    #[arg(long, global = true, env = "LOWCONF_SERVER", default_value = DEFAULT_SERVER)]
    server: String,
    /// Print per-stage timings as JSON and write timings.json next to the outputs.
    #[arg(long, global = true)]
    timings: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a planted Gaussian-mixture cache.
    Gen(GenArgs),
    /// Cluster, build the core set, train the selector and select.
    Run(RunArgs),
    /// Select on another cache with a frozen checkpoint.
    Transfer(TransferArgs),
    /// Confidence of every sample, without clustering or selection.
    Score(ScoreArgs),
    /// Copy the selected records of a JSON dataset.
    Subset(SubsetArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    k_true: usize,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    d: usize,
    #[arg(long, default_value_t = 1.0)]
    separation: f64,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long, default_value_t = 0.0)]
    outlier_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SelectionArgs {
    /// ratio or threshold; inferred from --rho/--tau when omitted.
    #[arg(long)]
    mode: Option<SelectionMode>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
}

impl SelectionArgs {
    fn apply(&self, sel: &mut SelectionParams) {
        if let Some(rho) = self.rho {
            sel.rho = rho;
            sel.mode = SelectionMode::Ratio;
        }
        if let Some(tau) = self.tau {
            sel.tau = tau;
            sel.mode = SelectionMode::Threshold;
        }
        if let Some(mode) = self.mode {
            sel.mode = mode;
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Flat `key = value` config file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    selection: SelectionArgs,
}

#[derive(Args)]
struct TransferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    cache: PathBuf,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Cluster seed for the target cache.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Assign to these saved centroids instead of re-clustering.
    #[arg(long)]
    reuse_centroids: Option<PathBuf>,
    #[arg(long)]
    prenormalize: bool,
    #[command(flatten)]
    selection: SelectionArgs,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    cache: PathBuf,
    /// JSONL output; scores are printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    prenormalize: bool,
}

#[derive(Args)]
struct SubsetArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Local { message: String, code: i32 },
    Client(ClientError),
}

impl Failure {
    fn config(message: String) -> Self {
        Failure::Local {
            message,
            code: ErrorClass::Config.exit_code(),
        }
    }
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        Failure::Client(e)
    }
}

impl From<lowconf_core::Error> for Failure {
    fn from(e: lowconf_core::Error) -> Self {
        Failure::Local {
            message: e.to_string(),
            code: e.class().exit_code(),
        }
    }
}

// the service resolves paths against its own working directory
fn absolute(path: &Path) -> Result<PathBuf, Failure> {
    std::path::absolute(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

fn print_json(value: &impl Serialize) {
    match serde_json::to_string_pretty(value) {
        Ok(s) => println!("{s}"),
        Err(e) => eprintln!("warning: cannot render response: {e}"),
    }
}

fn run_config(args: &RunArgs, timings: bool) -> Result<PipelineConfig, Failure> {
    let mut config = match &args.config {
        Some(path) => PipelineConfig::from_file(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = &args.cache {
        config.cache = v.clone();
    }
    if let Some(v) = &args.out_dir {
        config.out_dir = v.clone();
    }
    config.k = args.k.unwrap_or(config.k);
    config.q = args.q.unwrap_or(config.q);
    config.epochs = args.epochs.unwrap_or(config.epochs);
    config.lr = args.lr.unwrap_or(config.lr);
    config.hidden = args.hidden.unwrap_or(config.hidden);
    config.batch = args.batch.unwrap_or(config.batch);
    config.seed = args.seed.unwrap_or(config.seed);
    args.selection.apply(&mut config.selection);
    config.timings |= timings;
    config.validate()?;
    config.cache = absolute(&config.cache)?;
    config.out_dir = absolute(&config.out_dir)?;
    Ok(config)
}

async fn execute(cli: Cli) -> Result<(), Failure> {
    let client = Client::new(cli.server.clone());
    match cli.command {
        Command::Gen(a) => {
            let spec = SyntheticSpec {
                k_true: a.k_true,
                n: a.n,
                d: a.d,
                separation: a.separation,
                noise: a.noise,
                outlier_fraction: a.outlier_fraction,
                seed: a.seed,
            };
            spec.validate()?;
            let resp = client
                .gen(&GenRequest {
                    spec,
                    out: absolute(&a.out)?,
                })
                .await?;
            eprintln!(
                "wrote {} samples ({} outliers) to {}",
                resp.n,
                resp.outliers,
                resp.path.display()
            );
            print_json(&resp);
        }
        Command::Run(a) => {
            let config = run_config(&a, cli.timings)?;
            let report = client.run(&config).await?;
            eprintln!(
                "selected {} of {} (core set {}); checkpoint {}",
                report.selected,
                report.n,
                report.core_size,
                report.checkpoint_path.display()
            );
            if cli.timings {
                eprintln!(
                    "timings written to {}",
                    config.out_dir.join(TIMINGS_FILE).display()
                );
                print_json(&report.timings);
            } else {
                print_json(&report);
            }
        }
        Command::Transfer(a) => {
            let mut config = TransferConfig {
                checkpoint: absolute(&a.checkpoint)?,
                cache: absolute(&a.cache)?,
                out_dir: absolute(&a.out_dir)?,
                seed: a.seed,
                reuse_centroids: a.reuse_centroids.as_deref().map(absolute).transpose()?,
                prenormalize: a.prenormalize,
                timings: cli.timings,
                ..TransferConfig::default()
            };
            a.selection.apply(&mut config.selection);
            let report = client.transfer(&config).await?;
            eprintln!(
                "selected {} of {}; manifest {}",
                report.selected,
                report.n,
                report.manifest_path.display()
            );
            if cli.timings {
                print_json(&report.timings);
            } else {
                print_json(&report);
            }
        }
        Command::Score(a) => {
            let req = ScoreRequest {
                checkpoint: absolute(&a.checkpoint)?,
                cache: absolute(&a.cache)?,
                out: a.out.as_deref().map(absolute).transpose()?,
                prenormalize: a.prenormalize,
            };
            let resp = client.score(&req).await?;
            match &resp.out {
                Some(path) => eprintln!("scored {} samples into {}", resp.n, path.display()),
                None => {
                    for e in &resp.entries {
                        match serde_json::to_string(e) {
                            Ok(line) => println!("{line}"),
                            Err(err) => eprintln!("warning: {err}"),
                        }
                    }
                }
            }
        }
        Command::Subset(a) => {
            let req = SubsetRequest {
                manifest: absolute(&a.manifest)?,
                dataset: absolute(&a.dataset)?,
                out: absolute(&a.out)?,
            };
            let resp = client.subset(&req).await?;
            eprintln!("wrote {} records to {}", resp.selected, resp.out.display());
        }
    }
    Ok(())
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Local { message, code }) => {
            eprintln!("error: {message}");
            ExitCode::from(code as u8)
        }
        Err(Failure::Client(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
