use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dabench::config::{sim_name, BenchConfig, Format};
use dabench::harness::{run_nested_cv_with, RunOptions};
use dabench::records::{read_records, write_records};
use dabench::render::{build_table, scorer_analysis, ScorerChoice};
use dabench::{BenchError, Result};
use dabench_core::scorers::ScorerId;
use dabench_core::sim::{ShiftKind, SimShiftSpec};

#[derive(Parser)]
#[command(name = "bench", about = "Nested cross-validation benchmark for shallow domain adaptation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the benchmark described by a TOML or JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configured worker count.
        #[arg(long)]
        workers: Option<usize>,
        /// Overrides the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Render a result table from a records file.
    Table {
        #[arg(long)]
        records: PathBuf,
        #[arg(long, default_value = "markdown")]
        format: String,
        /// `selected` (best unsupervised scorer per method) or a scorer name.
        #[arg(long, default_value = "selected")]
        scorer: String,
    },
    /// Pearson correlation of each scorer with target accuracy.
    ScorerAnalysis {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Describe the available datasets.
    Datasets {
        #[arg(long)]
        list: bool,
    },
}

fn parse_choice(s: &str) -> Result<ScorerChoice> {
    if s.eq_ignore_ascii_case("selected") {
        return Ok(ScorerChoice::Selected);
    }
    ScorerId::parse(s).map(ScorerChoice::Fixed).ok_or_else(|| BenchError::Config(format!("unknown scorer {s:?}")))
}

fn parse_format(s: &str) -> Result<Format> {
    Format::parse(s).ok_or_else(|| BenchError::Config(format!("unknown format {s:?}")))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, workers, out, quiet } => {
            let mut cfg = BenchConfig::from_path(&config)?;
            if let Some(w) = workers {
                cfg.workers = w;
            }
            if let Some(o) = out {
                cfg.output.dir = o;
            }
            let output = run_nested_cv_with(&cfg, RunOptions { progress: !quiet })?;
            let dir = &cfg.output.dir;
            std::fs::create_dir_all(dir)?;
            write_records(dir.join("records.jsonl"), &output.records)?;
            let failures = output.records.iter().filter(|r| r.failed).count();
            let timeouts = output.records.iter().filter(|r| r.timed_out).count();
            match build_table(&output.records, ScorerChoice::Selected) {
                Ok(table) => {
                    for f in &cfg.output.formats {
                        std::fs::write(dir.join(format!("results.{}", f.extension())), table.render(*f)?)?;
                    }
                    if !quiet {
                        println!("{}", table.to_markdown());
                    }
                }
                Err(e) => eprintln!("no table: {e}"),
            }
            if let Ok(analysis) = scorer_analysis(&output.records) {
                std::fs::write(dir.join("scorer_analysis.json"), serde_json::to_string_pretty(&analysis)?)?;
                std::fs::write(dir.join("scorer_analysis.md"), analysis.to_markdown())?;
            }
            eprintln!(
                "{} records ({failures} failed, {timeouts} timed out), {} fits, {} cache hits, written to {}",
                output.records.len(),
                output.fits,
                output.cache_hits,
                dir.display()
            );
        }
        Command::Table { records, format, scorer } => {
            let records = read_records(records)?;
            let table = build_table(&records, parse_choice(&scorer)?)?;
            print!("{}", table.render(parse_format(&format)?)?);
        }
        Command::ScorerAnalysis { records, json } => {
            let analysis = scorer_analysis(&read_records(records)?)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&analysis)?);
            } else {
                print!("{}", analysis.to_markdown());
            }
        }
        Command::Datasets { list } => {
            if !list {
                println!("use --list to print the dataset catalogue");
                return Ok(());
            }
            println!("Simulated shifts (type = \"sim\", shift = <id>):");
            for kind in ShiftKind::ALL {
                let spec = SimShiftSpec::new(kind, 1000, 0);
                let id = serde_json::to_string(&kind)?;
                println!("  {:<14} {:<12} default noise {}", id.trim_matches('"'), sim_name(kind), spec.noise);
            }
            println!("CSV datasets (type = \"csv\"): header row, integer `label`, text `domain`, float features.");
            println!("  see data/example.csv and configs/example_csv.toml");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
