use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::info;
use tradbs_core::harness::{
    bench, load_config, oracle_check, run_loaded, OracleLimits, RunOptions, TrainOptions, train_ngram_cmd,
};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "tradbs", version, about = "Repetition-aware diverse beam search over discrete token streams")]
struct Cli {
    /// Experiment config (JSON)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output file; overrides the config's `output`
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Base seed for every sampling strategy
    #[arg(long, global = true)]
    seed_override: Option<u64>,

    /// Only print errors
    #[arg(long, short, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every strategy of the config and write JSONL results
    Decode,

    /// Compare the decoders against brute force on small random instances
    OracleCheck {
        #[arg(long, default_value_t = 5)]
        vocab: usize,
        #[arg(long, default_value_t = 6)]
        steps: usize,
        #[arg(long, default_value_t = 3)]
        beams: usize,
        #[arg(long, default_value_t = 2)]
        codebooks: usize,
        #[arg(long, default_value_t = 1000)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },

    /// Time the decode loop of one strategy from the config
    Bench {
        /// Strategy name; defaults to the first one
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
    },

    /// Train an n-gram model from a corpus file (written to --out)
    TrainNgram {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 3)]
        order: usize,
        #[arg(long, default_value_t = 1.0)]
        add_k: f64,
        /// Size of every codebook (default: max token + 1)
        #[arg(long)]
        vocab_size: Option<u32>,
        /// EOS token of codebook 0
        #[arg(long)]
        eos: Option<u32>,
    },
}

/// Config and input problems exit with 2, everything else with 3.
fn exit_code(err: &anyhow::Error) -> u8 {
    let config = err.chain().any(|e| match e.downcast_ref::<tradbs_core::Error>() {
        Some(e) => e.is_config_error(),
        None => e.downcast_ref::<UsageError>().is_some(),
    });
    if config {
        EXIT_CONFIG
    } else {
        EXIT_RUNTIME
    }
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn require_config(cli: &Cli) -> Result<&Path> {
    cli.config.as_deref().ok_or_else(|| usage("--config is required for this command"))
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, format!("{text}\n"))
            .map_err(|e| tradbs_core::Error::io(path, e))
            .with_context(|| format!("writing {}", path.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Decode => {
            let cfg = load_config(require_config(cli)?)?;
            let opts = RunOptions { out: cli.out.clone(), seed_override: cli.seed_override };
            let report = run_loaded(&cfg, &opts)?;
            info!(
                "wrote {} sequence and {} summary records to {}",
                report.sequence_records,
                report.summary_records,
                report.output.display()
            );
        }
        Command::OracleCheck { vocab, steps, beams, codebooks, instances, seed } => {
            let limits = OracleLimits { vocab: *vocab, steps: *steps, beams: *beams, codebooks: *codebooks };
            let report = oracle_check(&limits, *instances, cli.seed_override.unwrap_or(*seed))?;
            write_or_print(cli.out.as_deref(), &serde_json::to_string_pretty(&report)?)?;
            for c in &report.checks {
                info!("{}: {} passed, {} failed", c.name, c.passed, c.failed);
            }
            if !report.passed() {
                bail!("oracle check failed");
            }
        }
        Command::Bench { strategy, steps } => {
            let cfg = load_config(require_config(cli)?)?;
            let spec = match strategy {
                Some(name) => cfg
                    .config
                    .strategies
                    .iter()
                    .find(|s| &s.name == name)
                    .ok_or_else(|| usage(format!("no strategy named {name:?} in config")))?,
                None => &cfg.config.strategies[0],
            };
            let scorer = cfg.build_scorer()?;
            let prompt = cfg.prompt(scorer.vocab())?;
            let mut decoder = spec.decoder.clone();
            if let (Some(seed), tradbs_core::harness::DecoderSpec::Sample { sampling, .. }) =
                (cli.seed_override, &mut decoder)
            {
                sampling.seed = seed;
            }
            let report = bench(scorer.as_ref(), &prompt, &decoder, *steps)?;
            write_or_print(cli.out.as_deref(), &serde_json::to_string_pretty(&report)?)?;
        }
        Command::TrainNgram { corpus, order, add_k, vocab_size, eos } => {
            let output = cli.out.clone().ok_or_else(|| usage("train-ngram needs --out for the model file"))?;
            let opts = TrainOptions {
                corpus: corpus.clone(),
                order: *order,
                add_k: *add_k,
                output: output.clone(),
                vocab_size: *vocab_size,
                eos: *eos,
            };
            let model = train_ngram_cmd(&opts)?;
            info!("trained order-{} model, wrote {}", model.order(), output.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = exit_code(&err);
            eprintln!("error: {err:#}");
            ExitCode::from(code)
        }
    }
}
