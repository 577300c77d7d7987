use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use treed_gp::cli_io::synthetic::{LgbbLike, StepFunction};
use treed_gp::cli_io::{cmd_cv, cmd_fit, cmd_predict, PredictRequest, QuerySource};
use treed_gp::error::{Result, TgpError};
use treed_gp::tree::MoveKind;

#[derive(Parser)]
#[command(name = "tgp", version, about = "Bayesian treed Gaussian process regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sampler and write a model directory.
    Fit {
        #[arg(long)]
        config: PathBuf,
    },
    /// Summarize the posterior predictive distribution at new inputs.
    Predict {
        /// Model directory written by `fit`.
        #[arg(long)]
        model: PathBuf,
        /// Points per input over the training ranges, e.g. 41x1.
        #[arg(long, conflicts_with = "queries", required_unless_present = "queries")]
        grid: Option<String>,
        /// CSV of query points in original units.
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0.05,0.95")]
        quantiles: Vec<f64>,
        /// Value of an input held constant in a grid, as name=value.
        #[arg(long, value_parser = parse_fix)]
        fix: Vec<(String, f64)>,
        /// Output CSV; defaults to predictions.csv in the model directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// K-fold cross-validation of predictive interval coverage.
    Cv {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long, default_value_t = 0.9)]
        level: f64,
        /// Seed of the fold assignment.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a synthetic dataset as CSV.
    Generate {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Step,
    Lgbb,
}

fn parse_fix(s: &str) -> std::result::Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or("expected name=value")?;
    let v: f64 = v.trim().parse().map_err(|_| format!("not a number: `{v}`"))?;
    Ok((k.trim().to_string(), v))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Fit { config } => {
            let r = cmd_fit(&config)?;
            println!("wrote {}", r.out.display());
            println!("samples: {}", r.samples);
            println!("mean leaves: {:.3}", r.mean_leaves);
            println!("MAP leaves: {}", r.map_leaves);
            for (chain, s) in r.stats.iter().enumerate() {
                let rates: Vec<String> = MoveKind::ALL
                    .iter()
                    .map(|&k| match s.acceptance(k) {
                        Some(a) => format!("{k:?} {a:.3}"),
                        None => format!("{k:?} -"),
                    })
                    .collect();
                println!("chain {chain} acceptance: {}", rates.join(", "));
            }
            for f in &r.failures {
                eprintln!("warning: chain {} stopped at round {}: {}", f.chain, f.round, f.message);
            }
        }
        Command::Predict {
            model,
            grid,
            queries,
            quantiles,
            fix,
            out,
            seed,
        } => {
            let source = match (grid, queries) {
                (Some(g), _) => QuerySource::Grid(g),
                (None, Some(q)) => QuerySource::File(q),
                (None, None) => unreachable!("clap requires one of --grid and --queries"),
            };
            let r = cmd_predict(&PredictRequest {
                model,
                queries: source,
                levels: quantiles,
                fix,
                out,
                seed,
            })?;
            println!("wrote {} ({} rows)", r.path.display(), r.summary.len());
            if r.summary.extrapolated > 0 {
                eprintln!(
                    "warning: {} queries lie outside the training ranges",
                    r.summary.extrapolated
                );
            }
        }
        Command::Cv {
            config,
            folds,
            level,
            seed,
        } => {
            let r = cmd_cv(&config, folds, level, seed)?;
            for (k, c) in r.report.fold_coverage.iter().enumerate() {
                println!("fold {k}: coverage {c:.3}");
            }
            println!("pooled coverage at level {level}: {:.4}", r.report.coverage);
            println!("wrote {}", r.dir.display());
        }
        Command::Generate { kind, out, seed } => {
            let data = match kind {
                Kind::Step => StepFunction::default().generate(seed)?,
                Kind::Lgbb => LgbbLike::default().generate(seed)?,
            };
            let file = std::fs::File::create(&out).map_err(|e| TgpError::Io { path: out.clone(), source: e })?;
            data.write_csv(file)?;
            println!("wrote {} ({} rows)", out.display(), data.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
