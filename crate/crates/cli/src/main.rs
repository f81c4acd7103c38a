use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use repbench::pipeline::{run_pipeline, PipelineError, RunConfig, Stage};
use tracing_subscriber::EnvFilter;

#[derive(Parser, Debug)]
#[command(name = "repbench", version, about = "Cultural-representativeness benchmark for text-to-image systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    global: Global,
}

#[derive(Args, Debug)]
struct Global {
    /// Run config (TOML or JSON).
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override the dataset path from the config.
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// Override the output directory from the config.
    #[arg(short, long, global = true)]
    output_dir: Option<PathBuf>,
    /// Override the gold (user-study) export from the config.
    #[arg(long, global = true)]
    gold: Option<PathBuf>,
    /// Worker threads for intra-stage parallelism (default: all cores).
    #[arg(short, long, global = true)]
    jobs: Option<usize>,
    /// More log output; repeat for debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check dataset integrity.
    Validate {
        /// Also check the released-dataset counts.
        #[arg(long)]
        expect_released: bool,
    },
    /// Harvest candidate artifacts from a MediaWiki category tree.
    Crawl,
    /// Generate images for every configured system.
    Generate,
    /// Embed generated and ground-truth images.
    Embed,
    /// Compute every applicable scorer.
    Score,
    /// Ask the configured MLLM judge for ratings.
    Judge,
    /// Correlate scores with gold ratings.
    Correlate,
    /// Build the per-system benchmark report.
    Report,
    /// Count artifact names in a caption corpus.
    Freq,
    /// Write a small project on mock adapters into DIR.
    Demo { dir: PathBuf },
    /// Run several stages in order.
    Run {
        /// Comma-separated stages; default is every stage the config supports.
        #[arg(long, value_delimiter = ',')]
        stages: Vec<String>,
    },
}

fn load_config(g: &Global) -> Result<RunConfig, PipelineError> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => {
            let dataset = g
                .dataset
                .clone()
                .ok_or_else(|| PipelineError::Config("pass --config or --dataset".into()))?;
            RunConfig::new(dataset, g.output_dir.clone().unwrap_or_else(|| "repbench-out".into()))
        }
    };
    if let Some(d) = &g.dataset {
        cfg.dataset = absolute(d);
    }
    if let Some(o) = &g.output_dir {
        cfg.output_dir = absolute(o);
    }
    if let Some(p) = &g.gold {
        cfg.gold = Some(absolute(p));
    }
    if g.jobs.is_some() {
        cfg.jobs = g.jobs;
    }
    Ok(cfg)
}

fn absolute(p: &std::path::Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

fn default_stages(cfg: &RunConfig) -> Vec<Stage> {
    Stage::ALL
        .into_iter()
        .filter(|s| match s {
            Stage::Crawl => cfg.crawl.is_some(),
            Stage::Judge => cfg.judge.is_some(),
            Stage::Correlate => cfg.gold.is_some(),
            Stage::Freq => cfg.corpus.is_some(),
            _ => true,
        })
        .collect()
}

fn execute(cli: &Cli) -> Result<(), PipelineError> {
    if let Command::Demo { dir } = &cli.command {
        let config = repbench::pipeline::demo::write(dir)?;
        println!("wrote {}", config.display());
        println!("next: repbench run --config {}", config.display());
        return Ok(());
    }
    let mut cfg = load_config(&cli.global)?;
    let stages = match &cli.command {
        Command::Validate { expect_released } => {
            cfg.expect_released |= expect_released;
            vec![Stage::Validate]
        }
        Command::Crawl => vec![Stage::Crawl],
        Command::Generate => vec![Stage::Generate],
        Command::Embed => vec![Stage::Embed],
        Command::Score => vec![Stage::Score],
        Command::Judge => vec![Stage::Judge],
        Command::Correlate => vec![Stage::Correlate],
        Command::Report => vec![Stage::Report],
        Command::Freq => vec![Stage::Freq],
        Command::Demo { .. } => unreachable!("handled above"),
        Command::Run { stages } if stages.is_empty() => default_stages(&cfg),
        Command::Run { stages } => stages.iter().map(|s| s.parse()).collect::<Result<_, _>>()?,
    };
    let manifest = run_pipeline(&cfg, &stages)?;
    for t in &manifest.stages {
        println!("{:<10} ok  {:.2}s", t.stage.as_str(), t.seconds);
    }
    println!("outputs in {}", cfg.out().display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(level)))
        .init();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
