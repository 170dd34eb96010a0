mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Ctx;
use crate::error::{classify, ErrorReport};

/// Domain generalization experiments: additive disentanglement with latent
/// remixing.
///
/// Any configuration key can also be given as `--key value` (dashes or
/// underscores); see `--help-config` for the full list and defaults.
#[derive(Debug, Parser)]
#[command(name = "adrmx", version)]
struct Cli {
    /// TOML configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Run seed (overrides the config file)
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Parent directory of the run directories
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,

    /// Worker threads for sweep and ablate
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,

    /// Disable the remix term
    #[arg(long, global = true)]
    no_remix: bool,

    /// Disable the contrastive term
    #[arg(long, global = true)]
    no_contrastive: bool,

    /// Print every configuration key with its default and exit
    #[arg(long)]
    help_config: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train on the source domains, selecting on their validation splits
    Train,
    /// Score a checkpoint on every split of the configured dataset
    Eval,
    /// Random hyperparameter search
    Sweep,
    /// Leave-one-domain-out table for the four model variants
    Ablate,
    /// Two-dimensional embeddings of x_domain and x_dinv as CSV
    Export,
}

/// Flags clap handles itself; never treated as config overrides.
const RESERVED: &[&str] = &["config", "seed", "out", "workers", "help", "version"];

type Overrides = Vec<(String, String)>;

/// Splits `--key value` / `--key=value` pairs naming config keys out of
/// `args`; everything else is left for clap.
fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Overrides), error::Usage> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            rest.push(arg);
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n.replace('-', "_"), Some(v.to_string())),
            None => (flag.replace('-', "_"), None),
        };
        if RESERVED.contains(&name.as_str()) || config::schema_kind(&name).is_none() {
            rest.push(arg);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it
                .next()
                .ok_or_else(|| error::usage(format!("--{flag} needs a value")))?,
        };
        overrides.push((name, value));
    }
    Ok((rest, overrides))
}

fn fail(report: ErrorReport) -> ExitCode {
    eprintln!("error: {}", report.message);
    eprintln!("{}", serde_json::json!({ "error": report }));
    ExitCode::from(report.exit_code)
}

fn run() -> anyhow::Result<()> {
    let (args, mut overrides) = split_overrides(std::env::args().collect())?;
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            e.print()?;
            return Ok(());
        }
        Err(e) => {
            let text = e.to_string();
            let text = text.trim_end().trim_start_matches("error: ");
            return Err(error::usage(text).into());
        }
    };
    if cli.help_config {
        print!("{}", config::help_text());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(error::usage("missing command (train, eval, sweep, ablate or export); see --help").into());
    };
    if let Some(seed) = cli.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    if cli.no_remix {
        overrides.push(("use_remix".into(), "false".into()));
    }
    if cli.no_contrastive {
        overrides.push(("use_contrastive".into(), "false".into()));
    }
    if cli.workers == 0 {
        return Err(error::usage("--workers must be at least 1").into());
    }
    let config = config::load(cli.config.as_deref(), &overrides)?;
    let ctx = Ctx {
        config,
        out: cli.out,
        workers: cli.workers,
    };
    match command {
        Command::Train => commands::train(&ctx),
        Command::Eval => commands::eval(&ctx),
        Command::Sweep => commands::sweep(&ctx),
        Command::Ablate => commands::ablate(&ctx),
        Command::Export => commands::export(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(classify(&e)),
    }
}
