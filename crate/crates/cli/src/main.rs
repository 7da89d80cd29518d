//! `asc2end` command-line driver.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 some documents
//! failed, 4 a backend could not be reached.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};

use asc2end_core::corpus_io::load_corpus;
use asc2end_core::evaluation::{
    aggregate_survey, format_rouge_table, format_survey_table, load_scorecards, load_unmask_map, score_summaries,
    OverlapMode,
};
use asc2end_core::runner::{self, format_comparison, format_report, Mode, RunConfig, RunReport};

#[derive(Parser)]
#[command(
    name = "asc2end",
    version,
    about = "Summarize, retrieve and compare documents against a criteria document"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline (or one of its ablation modes) over a corpus.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// full, baseline, no-ds, no-rag or no-ca.
        #[arg(long)]
        mode: Option<Mode>,
        /// Process a seeded random sample of this many documents.
        #[arg(long)]
        sample: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        run_dir: Option<PathBuf>,
        /// Override any config key, e.g. `--set k=5`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Score persisted summaries against their source documents.
    ScoreRouge {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "clipped")]
        overlap: OverlapMode,
    },
    /// Aggregate human survey scorecards per model.
    Survey {
        #[arg(long)]
        cards: PathBuf,
        #[arg(long)]
        unmask: PathBuf,
    },
    /// Print run reports, optionally as differences against a reference run.
    Report {
        #[arg(long, required = true)]
        run: Vec<PathBuf>,
        #[arg(long)]
        reference: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            mode,
            sample,
            seed,
            workers,
            run_dir,
            overrides,
        } => run(&config, mode, sample, seed, workers, run_dir, &overrides),
        Command::ScoreRouge { run, corpus, overlap } => score_rouge(&run, &corpus, overlap),
        Command::Survey { cards, unmask } => survey(&cards, &unmask),
        Command::Report { run, reference } => report(&run, reference.as_deref()),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(
    config: &Path,
    mode: Option<Mode>,
    sample: Option<usize>,
    seed: Option<u64>,
    workers: Option<usize>,
    run_dir: Option<PathBuf>,
    overrides: &[String],
) -> anyhow::Result<u8> {
    let mut cfg = RunConfig::from_file(config)?;
    let cwd = std::env::current_dir()?;
    for item in overrides {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| anyhow!("--set expects KEY=VALUE, got `{item}`"))?;
        cfg.set(key.trim(), value, &cwd)?;
    }
    if let Some(mode) = mode {
        cfg.mode = mode;
    }
    if sample.is_some() {
        cfg.sample = sample;
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(workers) = workers {
        cfg.workers = workers;
    }
    if let Some(dir) = run_dir {
        cfg.run_dir = Some(cwd.join(dir));
    }

    log::info!("running mode {} into {}", cfg.mode, cfg.resolved_run_dir().display());
    match runner::run(&cfg) {
        Ok(report) => {
            print!("{}", format_report(&report));
            println!("run directory: {}", cfg.resolved_run_dir().display());
            Ok(report.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            Ok(e.exit_code() as u8)
        }
    }
}

fn score_rouge(run_dir: &Path, corpus: &Path, overlap: OverlapMode) -> anyhow::Result<u8> {
    let docs = load_corpus(corpus)?;
    let report = score_summaries(run_dir, &docs, overlap)?;
    match &report.averages {
        Some(avg) => print!("{}", format_rouge_table(&[("average", avg)])),
        None => println!("no summaries to score"),
    }
    println!(
        "{} documents scored, {} without a summary",
        report.per_document.len(),
        report.missing.len()
    );
    Ok(0)
}

fn survey(cards: &Path, unmask: &Path) -> anyhow::Result<u8> {
    let cards = load_scorecards(cards)?;
    let unmask = load_unmask_map(unmask)?;
    print!("{}", format_survey_table(&aggregate_survey(&cards, &unmask)?));
    Ok(0)
}

fn report(runs: &[PathBuf], reference: Option<&Path>) -> anyhow::Result<u8> {
    let load = |dir: &Path| RunReport::load(dir).with_context(|| format!("reading report in {}", dir.display()));
    let reports = runs.iter().map(|d| load(d)).collect::<anyhow::Result<Vec<_>>>()?;
    match reference {
        Some(dir) => {
            let reference = load(dir)?;
            print!("{}", format_comparison(&reference, &reports.iter().collect::<Vec<_>>()));
        }
        None => {
            for r in &reports {
                print!("{}", format_report(r));
            }
        }
    }
    Ok(0)
}
