use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use sun::corpus::{generate_corpus, load_corpus, save_corpus, Profile, Split};
use sun::harness::{ablate, evaluate_checkpoint, gradcheck, train, Drop, HarnessError, TrainConfig};

#[derive(Parser)]
#[command(name = "sun", version, about = "Toy text-to-SQL training with uncertainty constraints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus file.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        profile: ProfileArgs,
    },
    /// Train a model from a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_parser = ["dev", "test"])]
        split: String,
        /// Score the full action inventory instead of the admissible set.
        #[arg(long)]
        unconstrained: bool,
    },
    /// Train the full model and ablated variants over several seeds.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = ["du", "mu", "both"])]
        drop: String,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
    },
    /// Finite-difference check of every loss gradient.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct ProfileArgs {
    #[arg(long)]
    num_schemas: Option<usize>,
    #[arg(long)]
    groups_per_schema: Option<usize>,
    #[arg(long)]
    paraphrases_min: Option<usize>,
    #[arg(long)]
    paraphrases_max: Option<usize>,
    #[arg(long)]
    singleton_fraction: Option<f64>,
    #[arg(long)]
    rows_per_table: Option<usize>,
    #[arg(long)]
    dev_fraction: Option<f64>,
    #[arg(long)]
    test_fraction: Option<f64>,
    /// Move whole groups to dev/test instead of holding out paraphrases.
    #[arg(long)]
    no_paraphrase_heldout: bool,
}

impl ProfileArgs {
    fn profile(&self) -> Profile {
        let d = Profile::default();
        Profile {
            num_schemas: self.num_schemas.unwrap_or(d.num_schemas),
            groups_per_schema: self.groups_per_schema.unwrap_or(d.groups_per_schema),
            paraphrases_min: self.paraphrases_min.unwrap_or(d.paraphrases_min),
            paraphrases_max: self.paraphrases_max.unwrap_or(d.paraphrases_max),
            singleton_fraction: self.singleton_fraction.unwrap_or(d.singleton_fraction),
            rows_per_table: self.rows_per_table.unwrap_or(d.rows_per_table),
            dev_fraction: self.dev_fraction.unwrap_or(d.dev_fraction),
            test_fraction: self.test_fraction.unwrap_or(d.test_fraction),
            paraphrase_heldout: !self.no_paraphrase_heldout,
        }
    }
}

/// A failure that maps to a specific exit code.
#[derive(Debug)]
struct Exit(u8);

impl std::fmt::Display for Exit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "exit {}", self.0)
    }
}

impl std::error::Error for Exit {}

/// Writes a line to stdout; a closed pipe (`sun eval | head`) is not an error.
fn emit(text: &str) -> anyhow::Result<()> {
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenData { out, seed, profile } => {
            let profile = profile.profile();
            profile.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
            let corpus = generate_corpus(seed, &profile).map_err(HarnessError::from)?;
            save_corpus(&corpus, &out).map_err(HarnessError::from)?;
            load_corpus(&out).map_err(HarnessError::from).context("re-reading the written corpus")?;
            eprintln!("wrote {} examples over {} schemas to {}", corpus.examples.len(), corpus.schemas.len(), out.display());
        }
        Command::Train { config } => {
            let config = TrainConfig::load(&config)?;
            let outcome = train(&config)?;
            if let Some(last) = outcome.log.last() {
                eprintln!(
                    "step {}: t2s {:.4} du {:.4} mu {:.4} total {:.4}",
                    last.step, last.t2s, last.du, last.mu, last.total
                );
            }
            emit(&outcome.checkpoint.display().to_string())?;
        }
        Command::Eval { ckpt, data, split, unconstrained } => {
            let split: Split = split.parse().map_err(HarnessError::Config)?;
            let report = evaluate_checkpoint(&ckpt, &data, split, unconstrained)?;
            emit(&serde_json::to_string_pretty(&report)?)?;
        }
        Command::Ablate { config, drop, seeds } => {
            let config = TrainConfig::load(&config)?;
            let drop: Drop = drop.parse().map_err(HarnessError::Config)?;
            let report = ablate(&config, drop, seeds)?;
            emit(&report.to_markdown())?;
        }
        Command::Gradcheck { seed } => {
            let outcome = gradcheck(seed)?;
            emit(&outcome.summary())?;
            if !outcome.passed() {
                return Err(Exit(3).into());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(Exit(code)) = e.downcast_ref::<Exit>() {
                return ExitCode::from(*code);
            }
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<HarnessError>().map_or(2, HarnessError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
