use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::info;
use p2w_core::composer::PromptTemplate;
use p2w_core::pipeline::{self, RunConfig};
use p2w_core::synthworld::TaskKind;

#[derive(Parser)]
#[command(name = "p2w", version, about = "Zero-shot composed image retrieval on a synthetic world")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the world codes and the pretrain/val/unlabeled/holdout sets.
    GenWorld(Opts),
    /// Train the vision and text encoders with the contrastive loss.
    Pretrain(Opts),
    /// Train the mapping network on unlabeled images.
    TrainMapper(Opts),
    /// Evaluate every method on the selected tasks and write report.json.
    Eval(Opts),
    /// Sweep the averaging weight and write sweep.json.
    Sweep(Opts),
}

#[derive(Args)]
struct Opts {
    /// JSON run configuration; defaults are used for missing file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Prompt template with {pseudo} and optional {text}/{domain}/{objects}.
    #[arg(long)]
    template: Option<String>,
    /// Comma-separated tasks: a|domain, b|objects, c|attributes.
    #[arg(long)]
    tasks: Option<String>,
}

impl Opts {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if let Some(t) = &self.template {
            cfg.template = Some(t.parse::<PromptTemplate>()?);
        }
        if let Some(t) = &self.tasks {
            cfg.tasks = t
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(str::parse::<TaskKind>)
                .collect::<Result<_, _>>()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let (opts, stage): (&Opts, fn(&RunConfig, &std::path::Path) -> p2w_core::Result<PathBuf>) =
        match &cli.command {
            Command::GenWorld(o) => (o, pipeline::cmd_gen_world),
            Command::Pretrain(o) => (o, pipeline::cmd_pretrain),
            Command::TrainMapper(o) => (o, pipeline::cmd_train_mapper),
            Command::Eval(o) => (o, pipeline::cmd_eval),
            Command::Sweep(o) => (o, pipeline::cmd_sweep),
        };
    let cfg = opts.resolve()?;
    let path = stage(&cfg, &cfg.out_dir)?;
    info!("wrote {}", path.display());
    println!("{}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
