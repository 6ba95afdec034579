//! Strategy-comparison experiments.
//!
//! An experiment builds one dataset per loading strategy from the same
//! recordings and the same split, trains `R` seeded models on each and
//! aggregates test accuracy and wall time into a [`RunReport`]. Splits are
//! paired across strategies: every strategy yields the same
//! `(file, segment)` positions in the same order, so a split decided once by
//! example index (or by domain) selects the same underlying data everywhere.
//!
//! Timing fields (`build_time_s`, `train_time_s`, per-run times) are the only
//! non-deterministic values in a report.

mod report;

pub use report::{
    emit_plot_data, emit_report, parse_report_csv, read_report, render_report, write_reports, CsvRow, ReportFormat,
    REPORT_COLUMNS,
};

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::ingest::{self, Recording};
use crate::loaders::{
    self, check_leakage, partition_by_domain, split_holdout, split_kfold, AlternationMode, BuildOptions, Dataset,
    LeakageCheck, LoadingStrategy, SplitSpec,
};
use crate::nn::{self, CnnConfig, TrainConfig};
use crate::signal::{StandardizeMode, DEFAULT_SEGMENT_LEN};

pub const MODEL_NAME: &str = "cnn1d";

/// A strategy as requested by the user, before expansion against the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrategyChoice {
    /// One row per listed source; an empty list means every source.
    Single {
        #[serde(default)]
        sources: Vec<String>,
    },
    Parallel,
    Selective {
        #[serde(default)]
        mode: AlternationMode,
    },
}

impl StrategyChoice {
    /// Single, parallel and both selective modes.
    pub fn all() -> Vec<StrategyChoice> {
        vec![
            StrategyChoice::Single { sources: Vec::new() },
            StrategyChoice::Parallel,
            StrategyChoice::Selective {
                mode: AlternationMode::BySegment,
            },
            StrategyChoice::Selective {
                mode: AlternationMode::ByClass,
            },
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub manifest: PathBuf,
    pub strategies: Vec<StrategyChoice>,
    pub split: SplitSpec,
    pub segment_len: usize,
    pub standardize: StandardizeMode,
    pub phase_seed: Option<u64>,
    pub train: TrainConfig,
    pub out_dir: Option<PathBuf>,
    /// Train the repeat runs concurrently. Timings are then unreliable and
    /// flagged as such.
    pub parallel_runs: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            manifest: PathBuf::new(),
            strategies: StrategyChoice::all(),
            split: SplitSpec::ByDomain {
                train: Vec::new(),
                val: Vec::new(),
                test: Vec::new(),
            },
            segment_len: DEFAULT_SEGMENT_LEN,
            standardize: StandardizeMode::None,
            phase_seed: None,
            train: TrainConfig::default(),
            out_dir: None,
            parallel_runs: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string().replace('\n', " ").trim().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.strategies.is_empty() {
            return Err(Error::Config("at least one strategy is required".into()));
        }
        if self.segment_len < 2 {
            return Err(Error::Config(format!("segment length must be >= 2, got {}", self.segment_len)));
        }
        self.train.validate()
    }

    /// Concrete strategies for recordings carrying `sources`.
    pub fn expand_strategies(&self, sources: &[String]) -> Result<Vec<LoadingStrategy>> {
        let mut out = Vec::new();
        for choice in &self.strategies {
            match choice {
                StrategyChoice::Single { sources: picked } => {
                    let picked = if picked.is_empty() { sources } else { picked.as_slice() };
                    for s in picked {
                        if !sources.contains(s) {
                            return Err(Error::Config(format!(
                                "unknown source {s:?} (available: {})",
                                sources.join(", ")
                            )));
                        }
                        out.push(LoadingStrategy::Single { source_id: s.clone() });
                    }
                }
                StrategyChoice::Parallel => out.push(LoadingStrategy::Parallel),
                StrategyChoice::Selective { mode } => out.push(LoadingStrategy::Selective { mode: *mode }),
            }
        }
        let mut seen = BTreeSet::new();
        out.retain(|s| seen.insert(s.to_string()));
        Ok(out)
    }

    fn build_options(&self) -> BuildOptions {
        BuildOptions {
            segment_len: self.segment_len,
            standardize: self.standardize,
            phase_seed: self.phase_seed,
            parallel: self.train.parallel,
        }
    }
}

/// Fills an empty by-domain split with the default protocol: the last domain
/// is held out for testing, the others train, no validation set.
pub fn resolve_split(spec: &SplitSpec, domains: &[String]) -> Result<SplitSpec> {
    match spec {
        SplitSpec::ByDomain { train, val, test } if train.is_empty() && test.is_empty() => {
            let Some((last, rest)) = domains.split_last() else {
                return Err(Error::Split("no domains in data".into()));
            };
            if rest.is_empty() {
                return Err(Error::Split(format!("a by-domain split needs >= 2 domains, got only {last}")));
            }
            let train: Vec<String> = rest.iter().filter(|d| !val.contains(d)).cloned().collect();
            Ok(SplitSpec::ByDomain {
                train,
                val: val.clone(),
                test: vec![last.clone()],
            })
        }
        other => Ok(other.clone()),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run: usize,
    pub seed: u64,
    /// Test accuracy in percent; `None` when the run failed.
    pub accuracy_pct: Option<f64>,
    pub best_epoch: Option<usize>,
    pub train_time_s: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub strategy: String,
    pub variant: String,
    /// Successful runs.
    pub runs: usize,
    pub acc_mean_pct: Option<f64>,
    /// Population standard deviation over successful runs.
    pub acc_std_pct: Option<f64>,
    pub build_time_s: f64,
    pub train_time_s: f64,
    pub counts: SplitCounts,
    pub channels: usize,
    pub width: usize,
    pub train_feature_volume: usize,
    pub results: Vec<RunResult>,
    pub notes: Vec<String>,
}

impl ReportRow {
    /// Accuracies of the successful runs, in run order.
    pub fn accuracies(&self) -> Vec<f64> {
        self.results.iter().filter_map(|r| r.accuracy_pct).collect()
    }

    pub fn failed_runs(&self) -> impl Iterator<Item = &RunResult> {
        self.results.iter().filter(|r| r.accuracy_pct.is_none())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub dataset: String,
    pub model: String,
    pub split: SplitSpec,
    pub seed: u64,
    pub epochs: usize,
    pub timings_reliable: bool,
    pub rows: Vec<ReportRow>,
}

/// Mean and population standard deviation; `None` for an empty slice.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

struct Prepared {
    strategy: LoadingStrategy,
    build_time_s: f64,
    /// `(train, val, test)` per evaluation; one entry except for k-fold.
    splits: Vec<(Dataset, Dataset, Dataset)>,
    notes: Vec<String>,
}

/// Loads the manifest's recordings and runs the experiment on them.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    let manifest = ingest::load_manifest(&config.manifest)?;
    let recordings: Vec<Recording> = exec::map(&manifest.files, config.train.parallel, |entry| {
        ingest::read_recording_cached(entry, manifest.rate)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    run_on_recordings(config, &manifest.dataset_name, manifest.n_classes(), &recordings)
}

/// Runs the experiment on in-memory recordings. `config.manifest` is ignored.
pub fn run_on_recordings(
    config: &ExperimentConfig,
    dataset_name: &str,
    n_classes: usize,
    recordings: &[Recording],
) -> Result<RunReport> {
    config.validate()?;
    let sources = loaders::common_sources(recordings)?;
    let strategies = config.expand_strategies(&sources)?;
    let mut domains: Vec<String> = Vec::new();
    for r in recordings {
        if !domains.contains(&r.domain_id) {
            domains.push(r.domain_id.clone());
        }
    }
    let split = resolve_split(&config.split, &domains)?;
    split.validate()?;

    let prepared = strategies
        .iter()
        .map(|s| prepare(config, &split, s, n_classes, recordings))
        .collect::<Result<Vec<_>>>()?;
    check_pairing(&prepared)?;

    let mut rows = Vec::with_capacity(prepared.len());
    for p in &prepared {
        rows.push(train_strategy(config, p)?);
    }
    Ok(RunReport {
        dataset: dataset_name.to_string(),
        model: MODEL_NAME.to_string(),
        split,
        seed: config.train.seed,
        epochs: config.train.epochs,
        timings_reliable: !config.parallel_runs,
        rows,
    })
}

fn prepare(
    config: &ExperimentConfig,
    split: &SplitSpec,
    strategy: &LoadingStrategy,
    n_classes: usize,
    recordings: &[Recording],
) -> Result<Prepared> {
    let opts = config.build_options();
    let seed = config.train.seed;
    let start = Instant::now();
    let (splits, check, notes) = match split {
        SplitSpec::ByDomain { train, val, test } => {
            let part = partition_by_domain(recordings, train, val, test)?;
            let tr = loaders::build(&part.train, strategy, Some(n_classes), &opts)?;
            let build = |recs: &[Recording]| -> Result<Dataset> {
                if recs.is_empty() {
                    return Ok(tr.subset(&[]));
                }
                loaders::build(recs, strategy, Some(n_classes), &opts)
            };
            let (va, te) = (build(&part.val)?, build(&part.test)?);
            let notes = [&tr, &va, &te].iter().flat_map(|d| d.notes.clone()).collect();
            (vec![(tr, va, te)], LeakageCheck::SegmentsAndDomains, notes)
        }
        SplitSpec::Holdout { train, val, test } => {
            let ds = loaders::build(recordings, strategy, Some(n_classes), &opts)?;
            let s = split_holdout(&ds, [*train, *val, *test], seed)?;
            (vec![(s.train, s.val, s.test)], LeakageCheck::Segments, ds.notes)
        }
        SplitSpec::KFold { k } => {
            let ds = loaders::build(recordings, strategy, Some(n_classes), &opts)?;
            let folds = split_kfold(&ds, *k, seed)?;
            let splits = folds
                .into_iter()
                .map(|f| {
                    let empty = f.val.subset(&[]);
                    (f.train, empty, f.val)
                })
                .collect();
            (splits, LeakageCheck::Segments, ds.notes)
        }
    };
    let build_time_s = start.elapsed().as_secs_f64();
    for (tr, va, te) in &splits {
        tr.check_classes()?;
        check_leakage(tr, va, te, check).into_result()?;
    }
    Ok(Prepared {
        strategy: strategy.clone(),
        build_time_s,
        splits,
        notes,
    })
}

fn file_sets(ds: &Dataset) -> BTreeSet<&str> {
    ds.examples.iter().map(|e| e.provenance.file_id.as_str()).collect()
}

/// Equal example counts and identical file membership per split across
/// strategies; parallel feature volume is exactly `m` times the
/// single-channel volume.
fn check_pairing(prepared: &[Prepared]) -> Result<()> {
    let Some(first) = prepared.first() else {
        return Ok(());
    };
    for p in &prepared[1..] {
        for (fold, (a, b)) in first.splits.iter().zip(&p.splits).enumerate() {
            let pairs = [("train", &a.0, &b.0), ("val", &a.1, &b.1), ("test", &a.2, &b.2)];
            for (name, x, y) in pairs {
                if x.len() != y.len() {
                    return Err(Error::Shape(format!(
                        "{name} split (fold {fold}): {} has {} examples but {} has {}",
                        first.strategy,
                        x.len(),
                        p.strategy,
                        y.len()
                    )));
                }
                if file_sets(x) != file_sets(y) {
                    return Err(Error::Split(format!(
                        "{name} split (fold {fold}): {} and {} use different files",
                        first.strategy, p.strategy
                    )));
                }
            }
        }
    }
    let per_channel = |p: &Prepared| p.splits[0].0.feature_volume() / p.splits[0].0.channels().max(1);
    let base = per_channel(first);
    for p in prepared {
        let (tr, _, _) = &p.splits[0];
        let expected = base * tr.channels();
        if tr.feature_volume() != expected || per_channel(p) != base {
            return Err(Error::Shape(format!(
                "{}: feature volume {} is not {} x {}",
                p.strategy,
                tr.feature_volume(),
                tr.channels(),
                base
            )));
        }
    }
    Ok(())
}

fn train_strategy(config: &ExperimentConfig, p: &Prepared) -> Result<ReportRow> {
    let repeats = config.train.repeats;
    let inner_parallel = config.train.parallel && !config.parallel_runs;
    // Divergence excludes a run; any other failure aborts the experiment.
    let one_run = |run: usize| -> (RunResult, Option<Error>) {
        let seed = config.train.seed.wrapping_add(run as u64);
        let (tr, va, te) = &p.splits[run % p.splits.len()];
        let cfg = TrainConfig {
            seed,
            parallel: inner_parallel,
            ..config.train.clone()
        };
        let start = Instant::now();
        let outcome = nn::train(CnnConfig::new(tr.channels(), tr.n_classes), tr, va, &cfg)
            .and_then(|m| Ok((nn::evaluate(&m.model, te, inner_parallel)?, m.metrics)));
        let train_time_s = start.elapsed().as_secs_f64();
        match outcome {
            Ok((metrics, tm)) => (
                RunResult {
                    run,
                    seed,
                    accuracy_pct: Some(metrics.correct as f64 * 100.0 / metrics.total as f64),
                    best_epoch: Some(tm.best_epoch),
                    train_time_s: tm.train_time_s,
                    error: None,
                },
                None,
            ),
            Err(e) => {
                let result = RunResult {
                    run,
                    seed,
                    accuracy_pct: None,
                    best_epoch: None,
                    train_time_s,
                    error: Some(e.to_string()),
                };
                let fatal = (!matches!(e, Error::Divergence { .. })).then_some(e);
                (result, fatal)
            }
        }
    };
    let outcomes = if config.parallel_runs {
        exec::map_range(repeats, true, one_run)
    } else {
        (0..repeats).map(one_run).collect()
    };
    let mut results = Vec::with_capacity(repeats);
    for (r, fatal) in outcomes {
        if let Some(e) = fatal {
            return Err(e);
        }
        results.push(r);
    }
    let accs: Vec<f64> = results.iter().filter_map(|r| r.accuracy_pct).collect();
    let stats = mean_std(&accs);
    let train_time_s = results.iter().map(|r| r.train_time_s).sum::<f64>() / results.len() as f64;
    let (tr, va, te) = &p.splits[0];
    let mut notes = p.notes.clone();
    for r in results.iter().filter(|r| r.error.is_some()) {
        notes.push(format!("run {} excluded: diverged", r.run));
    }
    Ok(ReportRow {
        strategy: p.strategy.name().to_string(),
        variant: p.strategy.variant(),
        runs: accs.len(),
        acc_mean_pct: stats.map(|s| s.0),
        acc_std_pct: stats.map(|s| s.1),
        build_time_s: p.build_time_s,
        train_time_s,
        counts: SplitCounts {
            train: tr.len(),
            val: va.len(),
            test: te.len(),
        },
        channels: tr.channels(),
        width: tr.width(),
        train_feature_volume: tr.feature_volume(),
        results,
        notes,
    })
}
