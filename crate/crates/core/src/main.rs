use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use selemb::bench::{self, ExperimentConfig, StrategyChoice};
use selemb::loaders::{AlternationMode, SplitSpec};
use selemb::signal::StandardizeMode;
use selemb::synth::{self, BenchmarkSpec};
use selemb::Error;

/// Selective-embedding dataset builder and strategy benchmark.
#[derive(Parser)]
#[command(name = "selemb", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic multi-domain benchmark (CSV files and manifest).
    Synth(SynthArgs),
    /// Train and evaluate one loading strategy.
    Run(RunArgs),
    /// Train and evaluate every loading strategy on the same splits.
    Compare(CompareArgs),
    /// Merge report.json files into a long-form accuracy CSV.
    Plotdata(PlotArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 3)]
    domains: usize,
    #[arg(long, default_value_t = 2)]
    sensors: usize,
    /// Seconds per file.
    #[arg(long, default_value_t = 30.0)]
    duration: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Single,
    Parallel,
    Selective,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Segment,
    Class,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Holdout,
    Kfold,
    Domain,
}

#[derive(Clone, Copy, ValueEnum)]
enum StandardizeArg {
    None,
    Zscore,
}

/// Flags shared by `run` and `compare`. Each one overrides the config file.
#[derive(Args)]
struct ExperimentArgs {
    /// TOML experiment config; flags win on conflict.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output directory for report.{txt,csv,jsonl,json}.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
    /// Holdout fractions as train,val,test.
    #[arg(long, value_delimiter = ',', value_name = "TRAIN,VAL,TEST")]
    fractions: Option<Vec<f64>>,
    /// Number of folds for --split kfold.
    #[arg(long)]
    k: Option<usize>,
    /// Comma-separated domains; by default all but the last.
    #[arg(long, value_delimiter = ',')]
    train_domains: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    val_domains: Option<Vec<String>>,
    /// Comma-separated domains; by default the last one.
    #[arg(long, value_delimiter = ',')]
    test_domains: Option<Vec<String>>,
    #[arg(long)]
    segment_len: Option<usize>,
    #[arg(long, value_enum)]
    standardize: Option<StandardizeArg>,
    /// Train the repeat runs concurrently (timings become unreliable).
    #[arg(long)]
    parallel_runs: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: ExperimentArgs,
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    /// Alternation mode for selective loading.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Source for single loading; repeat for several rows. Default: all.
    #[arg(long)]
    source: Vec<String>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: ExperimentArgs,
}

#[derive(Args)]
struct PlotArgs {
    /// report.json files or directories containing one.
    #[arg(long, num_args = 1.., required = true)]
    reports: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn experiment_config(a: &ExperimentArgs) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &a.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(m) = &a.manifest {
        cfg.manifest = m.clone();
    }
    if let Some(o) = &a.out {
        cfg.out_dir = Some(o.clone());
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(r) = a.repeats {
        cfg.train.repeats = r;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(l) = a.segment_len {
        cfg.segment_len = l;
    }
    if let Some(s) = a.standardize {
        cfg.standardize = match s {
            StandardizeArg::None => StandardizeMode::None,
            StandardizeArg::Zscore => StandardizeMode::PerSegmentZscore,
        };
    }
    cfg.parallel_runs |= a.parallel_runs;

    let split = a.split.or_else(|| {
        if a.fractions.is_some() {
            Some(SplitArg::Holdout)
        } else if a.k.is_some() {
            Some(SplitArg::Kfold)
        } else if a.train_domains.is_some() || a.val_domains.is_some() || a.test_domains.is_some() {
            Some(SplitArg::Domain)
        } else {
            None
        }
    });
    match split {
        Some(SplitArg::Holdout) => {
            let (train, val, test) = match (&a.fractions, &cfg.split) {
                (Some(f), _) if f.len() == 3 => (f[0], f[1], f[2]),
                (Some(f), _) => {
                    return Err(Error::Config(format!("--fractions needs 3 values, got {}", f.len())));
                }
                (None, SplitSpec::Holdout { train, val, test }) => (*train, *val, *test),
                (None, _) => (0.7, 0.2, 0.1),
            };
            cfg.split = SplitSpec::Holdout { train, val, test };
        }
        Some(SplitArg::Kfold) => {
            let k = match (a.k, &cfg.split) {
                (Some(k), _) => k,
                (None, SplitSpec::KFold { k }) => *k,
                (None, _) => 5,
            };
            cfg.split = SplitSpec::KFold { k };
        }
        Some(SplitArg::Domain) => {
            let (train, val, test) = match &cfg.split {
                SplitSpec::ByDomain { train, val, test } => (train.clone(), val.clone(), test.clone()),
                _ => Default::default(),
            };
            cfg.split = SplitSpec::ByDomain {
                train: a.train_domains.clone().unwrap_or(train),
                val: a.val_domains.clone().unwrap_or(val),
                test: a.test_domains.clone().unwrap_or(test),
            };
        }
        None => {}
    }
    if cfg.manifest.as_os_str().is_empty() {
        return Err(Error::Config("--manifest (or manifest in --config) is required".into()));
    }
    Ok(cfg)
}

fn run_and_report(cfg: &ExperimentConfig) -> Result<(), Error> {
    let report = bench::run_experiment(cfg)?;
    print!("{}", bench::render_report(&report, bench::ReportFormat::Text));
    if let Some(dir) = &cfg.out_dir {
        for path in bench::write_reports(&report, dir)? {
            eprintln!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn execute(command: Command) -> Result<(), Error> {
    match command {
        Command::Synth(a) => {
            let spec = BenchmarkSpec::with_counts(a.classes, a.sensors, a.domains, a.duration, a.seed)?;
            fs::create_dir_all(&a.out).map_err(|e| Error::Io {
                path: a.out.clone(),
                source: e,
            })?;
            let manifest = synth::generate_benchmark(&spec, &a.out)?;
            println!("{}", manifest.path.display());
            Ok(())
        }
        Command::Run(a) => {
            let mut cfg = experiment_config(&a.common)?;
            let from_flags = a.strategy.is_some() || a.mode.is_some() || !a.source.is_empty();
            if from_flags || a.common.config.is_none() {
                let mode = match a.mode {
                    Some(ModeArg::Class) => AlternationMode::ByClass,
                    _ => AlternationMode::BySegment,
                };
                let strategy = a.strategy.unwrap_or(if a.source.is_empty() {
                    StrategyArg::Selective
                } else {
                    StrategyArg::Single
                });
                cfg.strategies = vec![match strategy {
                    StrategyArg::Single => StrategyChoice::Single { sources: a.source },
                    StrategyArg::Parallel => StrategyChoice::Parallel,
                    StrategyArg::Selective => StrategyChoice::Selective { mode },
                }];
            }
            run_and_report(&cfg)
        }
        Command::Compare(a) => {
            let mut cfg = experiment_config(&a.common)?;
            cfg.strategies = StrategyChoice::all();
            run_and_report(&cfg)
        }
        Command::Plotdata(a) => {
            let reports = a
                .reports
                .iter()
                .map(|p| bench::read_report(p))
                .collect::<Result<Vec<_>, _>>()?;
            let text = bench::emit_plot_data(&reports)?;
            fs::write(&a.out, text).map_err(|e| Error::Io {
                path: a.out.clone(),
                source: e,
            })?;
            println!("{}", a.out.display());
            Ok(())
        }
    }
}

fn fail(kind: &str, message: &str, code: u8) -> ExitCode {
    eprintln!("{}", json!({ "error": kind, "message": message }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            return fail("usage", first, 2);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), &e.to_string(), 1),
    }
}
