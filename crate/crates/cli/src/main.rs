//! `slime`: command-line front end for the attribution significance pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::Value;
use slime_core::config::PipelineConfig;
use slime_core::pipeline;
use slime_core::Error;

#[derive(Debug, Parser)]
#[command(
    name = "slime",
    version,
    about = "Significance testing for token attributions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Pipeline configuration (TOML).
    #[arg(long, global = true, default_value = "slime.toml")]
    config: PathBuf,

    /// Master seed; overrides SLIME_SEED and the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Cross-validated training; writes checkpoints and the best model.
    Train,
    /// Integrated gradients for every document under the trained model.
    Attribute,
    /// Use externally computed attributions instead of the toy model.
    ImportAttr {
        /// Attribution jsonl; defaults to `attribution.import`.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Per-category significance tests.
    Analyze,
    /// Count-based baseline and method comparison.
    Validate,
    /// Render tables and plots.
    Report,
    /// Every stage in order.
    All,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Error> {
    let mut cfg = PipelineConfig::load(&cli.config)?.with_env_seed()?;
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn json<T: serde::Serialize>(summary: Result<T, Error>) -> Result<Value, Error> {
    summary.map(|s| serde_json::to_value(s).expect("summary serializes"))
}

fn run(cli: &Cli) -> Result<Value, Error> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Train => json(pipeline::run_train(&cfg)),
        Command::Attribute => json(pipeline::run_attribute(&cfg)),
        Command::ImportAttr { input } => json(pipeline::run_import(&cfg, input.as_deref())),
        Command::Analyze => json(pipeline::run_analyze(&cfg)),
        Command::Validate => json(pipeline::run_validate(&cfg)),
        Command::Report => json(pipeline::run_report(&cfg)),
        Command::All => json(pipeline::run_all(&cfg)),
    }
}

fn print_text(value: &Value, indent: usize) {
    let pad = "  ".repeat(indent);
    match value {
        Value::Object(map) => {
            for (key, v) in map {
                match v {
                    Value::Object(_) => {
                        println!("{pad}{key}:");
                        print_text(v, indent + 1);
                    }
                    Value::Array(items) if items.iter().any(|i| i.is_object()) => {
                        println!("{pad}{key}:");
                        for item in items {
                            print_text(item, indent + 1);
                            println!();
                        }
                    }
                    _ => println!("{pad}{key}: {}", scalar(v)),
                }
            }
        }
        other => println!("{pad}{}", scalar(other)),
    }
}

fn scalar(value: &Value) -> String {
    match value {
        Value::String(s) => s.clone(),
        Value::Array(items) => items.iter().map(scalar).collect::<Vec<_>>().join(", "),
        Value::Null => "-".into(),
        other => other.to_string(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            match cli.format {
                Format::Json => println!(
                    "{}",
                    serde_json::to_string_pretty(&summary).expect("valid json")
                ),
                Format::Text => print_text(&summary, 0),
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            if err.is_usage() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
