//! Command line front end for the experiment harness.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use privsec::anonymize::{anonymize, verify_k_anonymity, QiTable, Table};
use privsec::dp::PrivacyLedger;
use privsec::harness::config::ExperimentConfig;
use privsec::harness::data::{synthesize_dataset, write_csv, DatasetKind};
use privsec::harness::metrics::summarize;
use privsec::harness::{
    join_federation, run_experiment, serve_federation, train_only, write_outputs, HarnessError,
    RunOutput,
};
use privsec::rng::SeedTree;

#[derive(Parser)]
#[command(
    name = "privsec",
    version,
    about = "Privacy and security attacks on machine learning, and defenses"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dataset utilities.
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
    /// Train the configured model without any attack.
    Train(RunArgs),
    /// Federated learning.
    Fed {
        #[command(subcommand)]
        command: FedCommand,
    },
    /// Run the attack configured in the file; NAME must match its [attack] name.
    Attack {
        name: String,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Mondrian k-anonymization of a CSV file.
    Anonymize {
        #[arg(long)]
        k: usize,
        /// Comma-separated quasi-identifier columns.
        #[arg(long, value_delimiter = ',')]
        qi: Vec<String>,
        /// Comma-separated sensitive columns, copied unchanged.
        #[arg(long, value_delimiter = ',', default_value = "")]
        sensitive: Vec<String>,
        input: PathBuf,
        output: PathBuf,
    },
    /// Privacy audits.
    Audit {
        #[command(subcommand)]
        command: AuditCommand,
    },
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Write a synthetic dataset as CSV.
    Gen {
        #[arg(long)]
        kind: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, env = "PRIVSEC_SEED")]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Role {
    Local,
    Server,
    Client,
}

#[derive(Subcommand)]
enum FedCommand {
    /// Run a federation, in one process or as one rank of several.
    Run {
        #[arg(long, value_enum, default_value = "local")]
        role: Role,
        #[arg(long)]
        rank: Option<u32>,
        #[arg(long, default_value = "127.0.0.1:7070")]
        addr: String,
        #[command(flatten)]
        args: RunArgs,
    },
}

#[derive(Subcommand)]
enum AuditCommand {
    /// Report (ε, δ) for DPSGD, from explicit parameters or a config's [dp] section.
    Dp {
        #[arg(long, conflicts_with_all = ["q", "sigma", "steps"])]
        config: Option<PathBuf>,
        #[arg(long)]
        q: Option<f64>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long, default_value_t = 1e-5)]
        delta: f64,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides [output] metrics.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Overrides [output] artifacts.
    #[arg(long)]
    artifacts: Option<PathBuf>,
}

fn err(kind: &str, message: impl Into<String>) -> HarnessError {
    match kind {
        "io" => HarnessError::Io(message.into()),
        _ => HarnessError::Config(message.into()),
    }
}

fn finish(cfg: &ExperimentConfig, out: &RunOutput, args: &RunArgs) -> Result<(), HarnessError> {
    write_outputs(cfg, out, args.metrics.as_deref(), args.artifacts.as_deref())?;
    println!(
        "{}",
        serde_json::to_string(&summarize(&out.records)).expect("summary serializes")
    );
    Ok(())
}

fn audit(
    config: Option<&Path>,
    q: Option<f64>,
    sigma: Option<f64>,
    steps: Option<u64>,
    delta: f64,
) -> Result<(), HarnessError> {
    let (q, sigma, steps, delta) = match config {
        Some(path) => {
            let cfg = ExperimentConfig::load(path)?;
            let dp = cfg
                .dp
                .as_ref()
                .ok_or_else(|| err("config", "no [dp] section"))?;
            let n = privsec::harness::load_dataset(&cfg, &SeedTree::new(cfg.seed))?.len();
            let train = n - (cfg.dataset.test_fraction * n as f64).floor() as usize;
            let lot = dp.config.lot_size;
            if lot == 0 || lot > train {
                return Err(err(
                    "config",
                    format!("lot size {lot} for {train} training rows"),
                ));
            }
            let lots = (train / lot) as u64;
            (
                lot as f64 / train as f64,
                dp.config.noise_multiplier,
                lots * dp.epochs as u64,
                dp.config.delta,
            )
        }
        None => match (q, sigma, steps) {
            (Some(q), Some(s), Some(t)) => (q, s, t, delta),
            _ => {
                return Err(err(
                    "config",
                    "give --config or all of --q, --sigma, --steps",
                ))
            }
        },
    };
    let mut ledger = PrivacyLedger::default();
    ledger.step_n(q, sigma, steps)?;
    let rep = ledger.epsilon(delta)?;
    let eps = if rep.epsilon.is_finite() {
        json!(rep.epsilon)
    } else {
        json!(null)
    };
    println!(
        "{}",
        json!({"epsilon": eps, "delta": rep.delta, "steps": steps, "q": q, "sigma": sigma, "order": rep.order})
    );
    Ok(())
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Dataset {
            command:
                DatasetCommand::Gen {
                    kind,
                    n,
                    noise,
                    seed,
                    out,
                },
        } => {
            let kind: DatasetKind = kind.parse()?;
            let data = synthesize_dataset(kind, n, noise, &mut SeedTree::new(seed).stream("data"))?;
            write_csv(&data, &out)
        }
        Command::Train(args) => {
            let cfg = ExperimentConfig::load(&args.config)?;
            let out = train_only(&cfg)?;
            finish(&cfg, &out, &args)
        }
        Command::Fed {
            command:
                FedCommand::Run {
                    role,
                    rank,
                    addr,
                    args,
                },
        } => {
            let cfg = ExperimentConfig::load(&args.config)?;
            match role {
                Role::Local => {
                    if cfg.fed.is_none() {
                        return Err(err("config", "no [fed] section"));
                    }
                    let out = run_experiment(&cfg)?;
                    finish(&cfg, &out, &args)
                }
                Role::Server => {
                    let out = serve_federation(&cfg, &addr)?;
                    finish(&cfg, &out, &args)
                }
                Role::Client => {
                    let rank = rank.ok_or_else(|| err("config", "--role client needs --rank"))?;
                    let loss = join_federation(&cfg, rank, &addr)?;
                    println!("{}", json!({"rank": rank, "final_loss": loss}));
                    Ok(())
                }
            }
        }
        Command::Attack { name, args } => {
            let cfg = ExperimentConfig::load(&args.config)?;
            if cfg.attack.name() != name {
                return Err(err(
                    "config",
                    format!("config runs attack {:?}, not {name:?}", cfg.attack.name()),
                ));
            }
            let out = run_experiment(&cfg)?;
            finish(&cfg, &out, &args)
        }
        Command::Anonymize {
            k,
            qi,
            sensitive,
            input,
            output,
        } => {
            let table = Table::read_csv(&input)?;
            let qi: Vec<&str> = qi
                .iter()
                .map(String::as_str)
                .filter(|s| !s.is_empty())
                .collect();
            let sens: Vec<&str> = sensitive
                .iter()
                .map(String::as_str)
                .filter(|s| !s.is_empty())
                .collect();
            let t = QiTable::infer(table, &qi, &sens)?;
            let anon = anonymize(&t, k)?;
            anon.table.write_csv(&output)?;
            let classes = anon.partition_id.iter().copied().max().map_or(0, |m| m + 1);
            println!(
                "{}",
                json!({"rows": anon.table.rows.len(), "classes": classes, "k": k, "k_anonymous": verify_k_anonymity(&anon, k)})
            );
            Ok(())
        }
        Command::Audit {
            command:
                AuditCommand::Dp {
                    config,
                    q,
                    sigma,
                    steps,
                    delta,
                },
        } => audit(config.as_deref(), q, sigma, steps, delta),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!(
                "{}",
                json!({"error": "usage", "message": first.trim_start_matches("error: ")})
            );
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({"error": e.kind(), "message": e.to_string()}));
            ExitCode::FAILURE
        }
    }
}
