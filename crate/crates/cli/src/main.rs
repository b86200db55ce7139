use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use riskweave::pipeline::{run, PipelineConfig, Stage};
use riskweave::predictor::Variant;

/// Risk-aware trajectory prediction pipeline.
#[derive(Parser)]
#[command(name = "riskweave", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate (or import) a dataset and write dataset.csv / map.json.
    Generate(Common),
    /// Split scenes and build the location-risk heatmap.
    Heatmap(Common),
    /// Train one predictor per agent class and variant.
    Train(Common),
    /// Score test examples and write per-stratum summaries.
    Evaluate(Common),
    /// Render figures and result tables.
    Report(Common),
    /// Run every stage in order.
    All(Common),
}

#[derive(Args)]
struct Common {
    /// JSON config file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides paths.output).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Global seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Restrict train/evaluate to one variant.
    #[arg(long)]
    variant: Option<Variant>,
    /// Override a config key, e.g. --set train.common.epochs=4. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let (stage, common) = match cli.command {
        Command::Generate(c) => (Stage::Generate, c),
        Command::Heatmap(c) => (Stage::Heatmap, c),
        Command::Train(c) => (Stage::Train, c),
        Command::Evaluate(c) => (Stage::Evaluate, c),
        Command::Report(c) => (Stage::Report, c),
        Command::All(c) => (Stage::All, c),
    };
    match execute(stage, common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("riskweave {stage}: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(stage: Stage, c: Common) -> riskweave::Result<()> {
    let mut overrides = c.overrides;
    // Flags win over --set, which wins over the file.
    if let Some(seed) = c.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(out) = c.out {
        overrides.push(format!("paths.output={}", serde_string(&out.to_string_lossy())));
    }
    let config = PipelineConfig::load(c.config.as_deref(), &overrides)?;
    run(&config, stage, c.variant)
}

/// Quotes a path as a JSON string so digits-only names are not read as numbers.
fn serde_string(s: &str) -> String {
    let escaped = s.replace('\\', "\\\\").replace('"', "\\\"");
    format!("\"{escaped}\"")
}
