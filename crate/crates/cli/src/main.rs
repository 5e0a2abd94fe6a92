use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use lever_core::pipeline::{write_synthetic_experiment, Pipeline, PipelineConfig, Stage};
use lever_core::rerank::Strategy;

#[derive(Parser)]
#[command(name = "lever", version, about = "Execution-guided reranking of sampled programs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Pipeline configuration (TOML).
    #[arg(long, default_value = "lever.toml")]
    config: PathBuf,
    /// Overrides run.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated strategies, e.g. lever,ml,ep_ml,ep_voting,greedy,oracle.
    #[arg(long)]
    strategies: Option<String>,
    /// Rank candidates individually instead of by execution result.
    #[arg(long)]
    no_aggregate: bool,
    /// Overrides run.report_dir.
    #[arg(long)]
    report_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw or ingest candidate programs.
    Sample(Common),
    /// Execute candidates against their contexts.
    Execute(Common),
    /// Label execution results against gold.
    Label(Common),
    /// Train the verifier on the train split.
    Train(Common),
    /// Score and rerank the eval split.
    Rerank(Common),
    /// Compute execution accuracy per strategy.
    Eval(Common),
    /// Run every stage, resuming from existing artifacts.
    Run {
        #[command(flatten)]
        common: Common,
        /// Run only this stage.
        #[arg(long)]
        stage: Option<Stage>,
    },
    /// Calibration and win/fail analysis of the scored eval split.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        calibration: bool,
        #[arg(long)]
        outcomes: bool,
    },
    /// Write a synthetic SQL experiment with a ready-to-run config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        train_tasks: usize,
        #[arg(long, default_value_t = 200)]
        eval_tasks: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn pipeline(common: &Common) -> Result<Pipeline> {
    let mut config = PipelineConfig::load(&common.config)
        .with_context(|| format!("loading {}", common.config.display()))?;
    if let Some(seed) = common.seed {
        config.run.seed = seed;
    }
    if let Some(list) = &common.strategies {
        config.run.strategies = Strategy::parse_list(list).map_err(anyhow::Error::msg)?;
    }
    if common.no_aggregate {
        config.rerank.aggregate = false;
    }
    if let Some(dir) = &common.report_dir {
        config.run.report_dir = Some(dir.clone());
    }
    Ok(Pipeline::new(config)?)
}

fn run_stage(common: &Common, stage: Stage) -> Result<()> {
    let mut p = pipeline(common)?;
    if let Some(report) = p.run_stage(stage)? {
        print!("{}", report.to_table());
    }
    Ok(())
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Sample(c) => run_stage(&c, Stage::Sample),
        Command::Execute(c) => run_stage(&c, Stage::Execute),
        Command::Label(c) => run_stage(&c, Stage::Label),
        Command::Train(c) => run_stage(&c, Stage::Train),
        Command::Rerank(c) => run_stage(&c, Stage::Rerank),
        Command::Eval(c) => run_stage(&c, Stage::Eval),
        Command::Run { common, stage: Some(stage) } => run_stage(&common, stage),
        Command::Run { common, stage: None } => {
            let mut p = pipeline(&common)?;
            let report = p.run()?;
            print!("{}", report.to_table());
            Ok(())
        }
        Command::Report {
            common,
            calibration,
            outcomes,
        } => {
            if !calibration && !outcomes {
                bail!("pass --calibration and/or --outcomes");
            }
            let mut p = pipeline(&common)?;
            let reports = p.report(calibration, outcomes)?;
            if let Some(curve) = reports.calibration {
                print!("{}", curve.to_table());
            }
            if let Some(buckets) = reports.outcomes {
                print!("{}", buckets.to_table());
            }
            Ok(())
        }
        Command::Synth {
            out,
            train_tasks,
            eval_tasks,
            seed,
        } => {
            let path = write_synthetic_experiment(&out, train_tasks, eval_tasks, seed)?;
            println!("{}", path.display());
            Ok(())
        }
    }
}
