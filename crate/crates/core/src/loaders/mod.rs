//! Loading strategies: recordings in, labeled FFT datasets out.
//!
//! All three strategies emit one example per simultaneous segment index of a
//! recording, so their example counts are identical. They differ in what each
//! example contains:
//!
//! | strategy  | channels | content of example `i`                        |
//! |-----------|----------|-----------------------------------------------|
//! | single    | 1        | segment `i` of the chosen source              |
//! | parallel  | m        | segment `i` of every source, stacked          |
//! | selective | 1        | segment `i` of one source picked by the mode  |
//!
//! Selective mode [`AlternationMode::BySegment`] picks source `i mod m`;
//! [`AlternationMode::ByClass`] takes every segment of class `j` from source
//! `(j - 1) mod m`.

mod split;

pub use split::{
    check_leakage, holdout_sizes, kfold_folds, partition_by_domain, split_holdout, split_kfold, DomainPartition,
    Fold, LeakageCheck, LeakageReport, SplitSpec, Splits, Violation,
};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::ingest::Recording;
use crate::rng;
use crate::signal::{self, Spectrum, StandardizeMode};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub file_id: String,
    pub domain_id: String,
    /// One source for single/selective examples, all sources for parallel ones.
    pub sources: Vec<String>,
    pub segment: usize,
}

/// One feature matrix of shape `(channels, width)`, row-major, with its label.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub channels: usize,
    pub width: usize,
    pub class_id: u32,
    pub provenance: Provenance,
}

impl Example {
    pub fn channel(&self, c: usize) -> &[f64] {
        &self.features[c * self.width..(c + 1) * self.width]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlternationMode {
    #[default]
    BySegment,
    ByClass,
}

impl AlternationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AlternationMode::BySegment => "segment",
            AlternationMode::ByClass => "class",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LoadingStrategy {
    Single { source_id: String },
    Parallel,
    Selective { mode: AlternationMode },
}

impl LoadingStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            LoadingStrategy::Single { .. } => "single",
            LoadingStrategy::Parallel => "parallel",
            LoadingStrategy::Selective { .. } => "selective",
        }
    }

    /// Source for single, mode for selective, `all` for parallel.
    pub fn variant(&self) -> String {
        match self {
            LoadingStrategy::Single { source_id } => source_id.clone(),
            LoadingStrategy::Parallel => "all".into(),
            LoadingStrategy::Selective { mode } => mode.as_str().into(),
        }
    }
}

impl fmt::Display for LoadingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.name(), self.variant())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildOptions {
    pub segment_len: usize,
    pub standardize: StandardizeMode,
    /// Seeds a per-recording starting source for by-segment alternation.
    /// `None` starts every recording at source 0.
    pub phase_seed: Option<u64>,
    pub parallel: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            segment_len: signal::DEFAULT_SEGMENT_LEN,
            standardize: StandardizeMode::None,
            phase_seed: None,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub n_classes: usize,
    pub strategy: LoadingStrategy,
    /// Non-fatal observations made while building (e.g. clamped counts).
    pub notes: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.examples.first().map_or(0, |e| e.channels)
    }

    pub fn width(&self) -> usize {
        self.examples.first().map_or(0, |e| e.width)
    }

    /// Total number of feature values across all examples.
    pub fn feature_volume(&self) -> usize {
        self.examples.iter().map(|e| e.features.len()).sum()
    }

    /// Same strategy and class count, selected examples.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            examples: indices.iter().map(|&i| self.examples[i].clone()).collect(),
            n_classes: self.n_classes,
            strategy: self.strategy.clone(),
            notes: Vec::new(),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for e in &self.examples {
            counts[e.class_id as usize - 1] += 1;
        }
        counts
    }

    /// Errors unless every class `1..=n_classes` has at least one example.
    pub fn check_classes(&self) -> Result<()> {
        let counts = self.class_counts();
        if let Some(j) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Config(format!("{}: class {} has no examples", self.strategy, j + 1)));
        }
        Ok(())
    }
}

/// Per-source spectra of one recording, in source then segment order.
pub fn preprocess(recording: &Recording, segment_len: usize, mode: StandardizeMode) -> Result<Vec<Vec<Spectrum>>> {
    recording
        .streams
        .iter()
        .map(|s| {
            signal::segment_stream(s, segment_len)?
                .iter()
                .map(|seg| signal::fft_magnitude(seg).map(|sp| signal::standardize(sp, mode)))
                .collect()
        })
        .collect()
}

fn spectrum_at(recording: &Recording, source: usize, index: usize, opts: &BuildOptions) -> Result<Vec<f64>> {
    let seg = signal::segment_at(&recording.streams[source], opts.segment_len, index)?;
    Ok(signal::standardize(signal::fft_magnitude(&seg)?, opts.standardize).bins)
}

fn segments_in(recording: &Recording, segment_len: usize) -> Result<usize> {
    if segment_len < 2 {
        return Err(Error::Config(format!("segment length must be >= 2, got {segment_len}")));
    }
    let n = signal::segment_count(recording.len(), segment_len);
    if n == 0 {
        return Err(Error::NoFullWindow {
            len: recording.len(),
            window: segment_len,
        });
    }
    Ok(n)
}

fn class_count(recordings: &[Recording]) -> Result<usize> {
    recordings
        .iter()
        .map(|r| r.class_id as usize)
        .max()
        .ok_or_else(|| Error::Config("no recordings".into()))
}

/// Ordered source ids shared by every recording.
pub fn common_sources(recordings: &[Recording]) -> Result<Vec<String>> {
    let first = recordings
        .first()
        .ok_or_else(|| Error::Config("no recordings".into()))?
        .source_ids();
    for r in recordings {
        if r.source_ids() != first {
            return Err(Error::InconsistentSources(format!(
                "recording {} has sources {:?}, expected {:?}",
                r.file_id,
                r.source_ids(),
                first
            )));
        }
    }
    Ok(first.into_iter().map(String::from).collect())
}

fn assemble(
    recordings: &[Recording],
    n_classes: Option<usize>,
    strategy: LoadingStrategy,
    opts: &BuildOptions,
    per_recording: impl Fn(usize, &Recording) -> Result<(Vec<Example>, Option<String>)> + Sync + Send,
) -> Result<Dataset> {
    let n_classes = match n_classes {
        Some(n) => n,
        None => class_count(recordings)?,
    };
    let indexed: Vec<(usize, &Recording)> = recordings.iter().enumerate().collect();
    let parts = exec::map(&indexed, opts.parallel, |(i, r)| per_recording(*i, r));
    let mut examples = Vec::new();
    let mut notes = Vec::new();
    for part in parts {
        let (ex, note) = part?;
        examples.extend(ex);
        notes.extend(note);
    }
    Ok(Dataset {
        examples,
        n_classes,
        strategy,
        notes,
    })
}

fn example(recording: &Recording, sources: Vec<String>, segment: usize, features: Vec<f64>, channels: usize) -> Example {
    let width = features.len() / channels;
    Example {
        features,
        channels,
        width,
        class_id: recording.class_id,
        provenance: Provenance {
            file_id: recording.file_id.clone(),
            domain_id: recording.domain_id.clone(),
            sources,
            segment,
        },
    }
}

/// Every segment of `source_id`, one channel.
pub fn build_single(
    recordings: &[Recording],
    source_id: &str,
    n_classes: Option<usize>,
    opts: &BuildOptions,
) -> Result<Dataset> {
    for r in recordings {
        if r.stream(source_id).is_none() {
            return Err(Error::MissingSource {
                file_id: r.file_id.clone(),
                source_id: source_id.to_string(),
            });
        }
    }
    let strategy = LoadingStrategy::Single {
        source_id: source_id.to_string(),
    };
    assemble(recordings, n_classes, strategy, opts, |_, r| {
        let src = r.streams.iter().position(|s| s.meta.source_id == source_id).unwrap();
        let n = segments_in(r, opts.segment_len)?;
        let ex = (0..n)
            .map(|i| {
                let bins = spectrum_at(r, src, i, opts)?;
                Ok(example(r, vec![source_id.to_string()], i, bins, 1))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((ex, None))
    })
}

/// Simultaneous segments of all `m >= 2` sources stacked as `m` channels.
pub fn build_parallel(recordings: &[Recording], n_classes: Option<usize>, opts: &BuildOptions) -> Result<Dataset> {
    let sources = common_sources(recordings)?;
    if sources.len() < 2 {
        return Err(Error::InconsistentSources(format!(
            "parallel loading needs at least 2 sources, found {}",
            sources.len()
        )));
    }
    let m = sources.len();
    assemble(recordings, n_classes, LoadingStrategy::Parallel, opts, |_, r| {
        let n = segments_in(r, opts.segment_len)?;
        let ex = (0..n)
            .map(|i| {
                let mut features = Vec::with_capacity(m * opts.segment_len / 2);
                for s in 0..m {
                    features.extend(spectrum_at(r, s, i, opts)?);
                }
                Ok(example(r, sources.clone(), i, features, m))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((ex, None))
    })
}

/// By-segment alternation plan over per-source segment counts: entry `i` is
/// `(source, segment)` with `source = (i + phase) mod m`. Counts are clamped
/// to the shortest source; the second value reports a clamp.
pub fn interleave_plan(counts: &[usize], phase: usize) -> (Vec<(usize, usize)>, Option<usize>) {
    let m = counts.len();
    let n = counts.iter().copied().min().unwrap_or(0);
    let clamped = counts.iter().any(|&c| c != n).then_some(n);
    let plan = (0..n).map(|i| ((i + phase) % m, i)).collect();
    (plan, clamped)
}

/// Source index that supplies class `class_id` under by-class alternation.
pub fn by_class_source(class_id: u32, m: usize) -> usize {
    (class_id as usize - 1) % m
}

/// One channel whose segments alternate between sources.
pub fn build_selective(
    recordings: &[Recording],
    mode: AlternationMode,
    n_classes: Option<usize>,
    opts: &BuildOptions,
) -> Result<Dataset> {
    let sources = common_sources(recordings)?;
    let m = sources.len();
    if m < 2 {
        return Err(Error::InconsistentSources(format!(
            "selective embedding needs at least 2 sources, found {m}"
        )));
    }
    let strategy = LoadingStrategy::Selective { mode };
    assemble(recordings, n_classes, strategy, opts, |ri, r| {
        let counts = r
            .streams
            .iter()
            .map(|s| signal::segment_count(s.samples.len(), opts.segment_len))
            .collect::<Vec<_>>();
        segments_in(r, opts.segment_len)?;
        let (plan, note) = match mode {
            AlternationMode::BySegment => {
                let phase = opts.phase_seed.map_or(0, |s| (rng::mix(s, ri as u64) % m as u64) as usize);
                let (plan, clamped) = interleave_plan(&counts, phase);
                let note = clamped.map(|n| format!("{}: per-source segment counts {counts:?} clamped to {n}", r.file_id));
                (plan, note)
            }
            AlternationMode::ByClass => {
                let src = by_class_source(r.class_id, m);
                ((0..counts[src]).map(|i| (src, i)).collect(), None)
            }
        };
        let ex = plan
            .into_iter()
            .map(|(s, i)| {
                let bins = spectrum_at(r, s, i, opts)?;
                Ok(example(r, vec![sources[s].clone()], i, bins, 1))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((ex, note))
    })
}

pub fn build(
    recordings: &[Recording],
    strategy: &LoadingStrategy,
    n_classes: Option<usize>,
    opts: &BuildOptions,
) -> Result<Dataset> {
    match strategy {
        LoadingStrategy::Single { source_id } => build_single(recordings, source_id, n_classes, opts),
        LoadingStrategy::Parallel => build_parallel(recordings, n_classes, opts),
        LoadingStrategy::Selective { mode } => build_selective(recordings, *mode, n_classes, opts),
    }
}
