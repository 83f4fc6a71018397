use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use s4_core::corpus::{OracleRuleSet, SyntheticConfig};
use s4_core::evidence::EvidenceSet;
use s4_core::predictor::PredictorKind;
use s4_core::s4::{InteractiveOracle, Oracle, S4Config, ScriptedOracle, SstMode};

use s4_cli::commands::{self, DplTrainConfig, InspectTarget, LineOracle};
use s4_cli::exit::{exit_code, InputError, EXIT_CONFIG, EXIT_OK};

#[derive(Parser)]
#[command(name = "s4", version, about = "Deep probabilistic logic with self-supervised self-supervision")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DataArgs {
    /// JSONL dataset.
    #[arg(long)]
    data: PathBuf,
    /// Ordered label names; defaults to the sorted labels seen in the data.
    #[arg(long, value_delimiter = ',')]
    labels: Option<Vec<String>>,
    /// Token truncation length.
    #[arg(long)]
    max_len: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Predictor {
    Bow,
    Attn,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OracleKind {
    Scripted,
    Interactive,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Attention,
    Entropy,
    Joint,
    /// No SST proposals.
    None,
}

#[derive(Clone, Copy, ValueEnum)]
enum Target {
    Factors,
    Proposals,
    Graph,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted synthetic dataset.
    GenSynthetic {
        /// Named preset: separable or noisy.
        #[arg(long, conflicts_with = "config")]
        preset: Option<String>,
        /// Generator config as JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write seed evidence naming planted tokens.
        #[arg(long)]
        seed_evidence_out: Option<PathBuf>,
        /// Planted tokens per class in the seed evidence.
        #[arg(long, default_value_t = 3)]
        seed_tokens: usize,
    },
    /// Fit the scripted oracle's rule set from gold labels.
    GenOracle {
        #[command(flatten)]
        data: DataArgs,
        /// Tokens per label.
        #[arg(long, default_value_t = 30)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a predictor with DPL from seed evidence.
    DplTrain {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        seed_evidence: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        predictor: Option<Predictor>,
        #[arg(long)]
        seed: Option<u64>,
        /// Module and DPL config as JSON.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run S4 with SST proposals and feature queries.
    S4Run {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        seed_evidence: PathBuf,
        /// Query budget.
        #[arg(long)]
        budget: Option<usize>,
        /// Outer iterations.
        #[arg(long)]
        outer: Option<usize>,
        #[arg(long, value_enum, value_delimiter = ',')]
        modes: Option<Vec<Mode>>,
        #[arg(long, value_enum, default_value = "scripted")]
        oracle: OracleKind,
        /// Rule set for the scripted oracle.
        #[arg(long)]
        oracle_file: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory.
        #[arg(long)]
        out: PathBuf,
        /// Session config as JSON.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Test-split accuracy of a saved predictor.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        /// Predictor directory.
        #[arg(long)]
        predictor: PathBuf,
    },
    /// Serve the HTTP session API.
    Serve {
        #[arg(long, default_value = "s4-sessions")]
        store: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
    /// Dump a recorded run's factors, SST proposals or factor graph.
    Inspect {
        #[arg(value_enum)]
        target: Target,
        /// Run directory written by s4-run or a service session directory.
        #[arg(long)]
        run: PathBuf,
    },
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn load(data: &DataArgs) -> Result<(s4_core::corpus::Dataset, s4_core::corpus::DatasetSchema)> {
    let schema = commands::schema(data.labels.clone(), data.max_len);
    Ok((commands::load_data(&data.data, &schema)?, schema))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenSynthetic {
            preset,
            config,
            seed,
            out,
            seed_evidence_out,
            seed_tokens,
        } => {
            let cfg: SyntheticConfig = match (preset, config) {
                (Some(p), _) => SyntheticConfig::preset(&p).ok_or_else(|| InputError::Config(format!("unknown preset `{p}`")))?,
                (None, Some(path)) => commands::read_config(&path)?,
                (None, None) => SyntheticConfig::separable(),
            };
            let ds = commands::gen_synthetic(&cfg, seed, &out, seed_evidence_out.as_deref().map(|p| (p, seed_tokens)))?;
            log::info!("wrote {} instances to {}", ds.instances().len(), out.display());
        }
        Command::GenOracle { data, k, out } => {
            let (ds, _) = load(&data)?;
            let rules = commands::gen_oracle(&ds, k, &out)?;
            log::info!("wrote {} label rule lists to {}", rules.rules.len(), out.display());
        }
        Command::DplTrain {
            data,
            seed_evidence,
            out,
            predictor,
            seed,
            config,
        } => {
            let mut cfg: DplTrainConfig = commands::load_config(config.as_deref())?;
            match predictor {
                Some(Predictor::Bow) => cfg.module.kind = PredictorKind::BowLogistic,
                Some(Predictor::Attn) => cfg.module.kind = PredictorKind::AttnEmbed,
                None => {}
            }
            if let Some(s) = seed {
                cfg.module.seed = s;
                cfg.dpl.seed = s;
            }
            let (ds, _) = load(&data)?;
            let evidence = EvidenceSet::load(&seed_evidence)?;
            let report = commands::dpl_train(&ds, evidence, &cfg, &out)?;
            print_json(&report.evaluation)?;
        }
        Command::S4Run {
            data,
            seed_evidence,
            budget,
            outer,
            modes,
            oracle,
            oracle_file,
            seed,
            out,
            config,
        } => {
            let mut cfg: S4Config = commands::load_config(config.as_deref())?;
            if let Some(b) = budget {
                cfg.budget = b;
            }
            if let Some(m) = outer {
                cfg.outer_iterations = m;
            }
            if let Some(modes) = modes {
                cfg.modes = modes
                    .into_iter()
                    .filter_map(|m| match m {
                        Mode::Attention => Some(SstMode::Attention),
                        Mode::Entropy => Some(SstMode::Entropy),
                        Mode::Joint => Some(SstMode::Joint),
                        Mode::None => None,
                    })
                    .collect();
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let (ds, schema) = load(&data)?;
            let evidence = EvidenceSet::load(&seed_evidence)?;
            let rules: Option<OracleRuleSet> = match (oracle, &oracle_file) {
                (OracleKind::Scripted, Some(p)) => Some(commands::load_json(p)?),
                (OracleKind::Scripted, None) if cfg.budget > 0 => {
                    return Err(InputError::Config("the scripted oracle needs --oracle-file".into()).into());
                }
                _ => None,
            };
            let summary = {
                let stdin = io::stdin();
                let mut interactive;
                let mut scripted;
                let mut silent = InteractiveOracle;
                let o: &mut dyn Oracle = match (&rules, oracle) {
                    (Some(r), _) => {
                        scripted = ScriptedOracle { rules: r.clone() };
                        &mut scripted
                    }
                    (None, OracleKind::Interactive) => {
                        interactive = LineOracle::new(stdin.lock(), io::stderr());
                        &mut interactive
                    }
                    (None, OracleKind::Scripted) => &mut silent,
                };
                commands::s4_run(&ds, &schema, cfg, evidence, rules.clone(), o, &out)?
            };
            print_json(&summary)?;
        }
        Command::Evaluate { data, predictor } => {
            let (ds, _) = load(&data)?;
            print_json(&commands::evaluate_predictor(&ds, &predictor)?)?;
        }
        Command::Serve { store, addr } => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(s4_cli::service::serve(store, &addr))?;
        }
        Command::Inspect { target, run } => {
            let t = match target {
                Target::Factors => InspectTarget::Factors,
                Target::Proposals => InspectTarget::Proposals,
                Target::Graph => InspectTarget::Graph,
            };
            print_json(&commands::inspect(Path::new(&run), t)?)?;
        }
    }
    Ok(())
}

// Causes that only repeat the tail of the previous message are skipped.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if out.ends_with(&msg) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&msg);
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { EXIT_OK as u8 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
