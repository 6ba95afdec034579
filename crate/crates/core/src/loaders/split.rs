use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::ingest::Recording;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitSpec {
    /// Example-level shuffle then fractional partition.
    Holdout { train: f64, val: f64, test: f64 },
    /// `k` rotating validation folds.
    KFold { k: usize },
    /// Recording-level partition by domain. An empty `val` list means no
    /// validation set; training then keeps its final epoch.
    ByDomain {
        train: Vec<String>,
        val: Vec<String>,
        test: Vec<String>,
    },
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::Holdout {
            train: 0.7,
            val: 0.2,
            test: 0.1,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            SplitSpec::Holdout { train, val, test } => {
                let f = [*train, *val, *test];
                if f.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                    return Err(Error::Split(format!("holdout fractions must be positive, got {f:?}")));
                }
                if (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return Err(Error::Split(format!("holdout fractions must sum to 1, got {f:?}")));
                }
            }
            SplitSpec::KFold { k } => {
                if *k < 2 {
                    return Err(Error::Split(format!("k-fold needs k >= 2, got {k}")));
                }
            }
            SplitSpec::ByDomain { train, val, test } => {
                let sets = [("train", train), ("val", val), ("test", test)];
                for (i, (na, a)) in sets.iter().enumerate() {
                    for (nb, b) in &sets[i + 1..] {
                        if let Some(d) = a.iter().find(|d| b.contains(d)) {
                            return Err(Error::Split(format!("domain {d} is in both {na} and {nb}")));
                        }
                    }
                }
                if train.is_empty() || test.is_empty() {
                    return Err(Error::Split("by-domain split needs train and test domains".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fold {
    pub train: Dataset,
    pub val: Dataset,
}

/// Split sizes for `n` items by largest-remainder rounding; ties go to the
/// earlier split.
pub fn holdout_sizes(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let quotas = fractions.map(|f| f * n as f64);
    let mut sizes = quotas.map(|q| q.floor() as usize);
    let assigned: usize = sizes.iter().sum();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    sizes
}

pub fn split_holdout(dataset: &Dataset, fractions: [f64; 3], seed: u64) -> Result<Splits> {
    SplitSpec::Holdout {
        train: fractions[0],
        val: fractions[1],
        test: fractions[2],
    }
    .validate()?;
    let n = dataset.len();
    let sizes = holdout_sizes(n, fractions);
    if let Some(i) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::Split(format!(
            "{} examples leave the {} split empty",
            n,
            ["train", "val", "test"][i]
        )));
    }
    let perm = rng::permutation(n, seed);
    let take = |range: std::ops::Range<usize>| {
        let mut idx = perm[range].to_vec();
        idx.sort_unstable();
        dataset.subset(&idx)
    };
    Ok(Splits {
        train: take(0..sizes[0]),
        val: take(sizes[0]..sizes[0] + sizes[1]),
        test: take(sizes[0] + sizes[1]..n),
    })
}

/// Index sets of `k` near-equal folds over a seeded permutation of `0..n`;
/// the first `n mod k` folds hold one extra item.
pub fn kfold_folds(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    SplitSpec::KFold { k }.validate()?;
    if n < k {
        return Err(Error::Split(format!("{n} examples cannot fill {k} folds")));
    }
    let perm = rng::permutation(n, seed);
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        let mut idx = perm[start..start + len].to_vec();
        idx.sort_unstable();
        folds.push(idx);
        start += len;
    }
    Ok(folds)
}

pub fn split_kfold(dataset: &Dataset, k: usize, seed: u64) -> Result<Vec<Fold>> {
    let folds = kfold_folds(dataset.len(), k, seed)?;
    Ok(folds
        .iter()
        .map(|val| {
            let held: BTreeSet<usize> = val.iter().copied().collect();
            let train: Vec<usize> = (0..dataset.len()).filter(|i| !held.contains(i)).collect();
            Fold {
                train: dataset.subset(&train),
                val: dataset.subset(val),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainPartition {
    pub train: Vec<Recording>,
    pub val: Vec<Recording>,
    pub test: Vec<Recording>,
}

/// Recording-level split: no file can reach two splits.
pub fn partition_by_domain(
    recordings: &[Recording],
    train: &[String],
    val: &[String],
    test: &[String],
) -> Result<DomainPartition> {
    SplitSpec::ByDomain {
        train: train.to_vec(),
        val: val.to_vec(),
        test: test.to_vec(),
    }
    .validate()?;
    let known: BTreeSet<&str> = recordings.iter().map(|r| r.domain_id.as_str()).collect();
    for d in train.iter().chain(val).chain(test) {
        if !known.contains(d.as_str()) {
            return Err(Error::Split(format!("unknown domain {d}")));
        }
    }
    let pick = |set: &[String]| -> Vec<Recording> {
        recordings.iter().filter(|r| set.contains(&r.domain_id)).cloned().collect()
    };
    Ok(DomainPartition {
        train: pick(train),
        val: pick(val),
        test: pick(test),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeakageCheck {
    /// No `(file, segment, source)` triple in two splits.
    Segments,
    /// Additionally no domain in two splits.
    SegmentsAndDomains,
}

const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    Segment {
        file_id: String,
        segment: usize,
        source: String,
        splits: (&'static str, &'static str),
    },
    Domain {
        domain_id: String,
        splits: (&'static str, &'static str),
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Segment {
                file_id,
                segment,
                source,
                splits,
            } => write!(
                f,
                "({file_id}, segment {segment}, {source}) in both {} and {}",
                splits.0, splits.1
            ),
            Violation::Domain { domain_id, splits } => {
                write!(f, "domain {domain_id} in both {} and {}", splits.0, splits.1)
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LeakageReport {
    pub violations: Vec<Violation>,
}

impl LeakageReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        match self.violations.first() {
            None => Ok(()),
            Some(v) => Err(Error::Leakage(format!("{v} ({} violations)", self.violations.len()))),
        }
    }
}

pub fn check_leakage(train: &Dataset, val: &Dataset, test: &Dataset, check: LeakageCheck) -> LeakageReport {
    let splits = [train, val, test];
    let mut triples: BTreeMap<(&str, usize, &str), usize> = BTreeMap::new();
    let mut domains: BTreeMap<&str, usize> = BTreeMap::new();
    let mut seen_pairs = BTreeSet::new();
    let mut violations = Vec::new();
    for (si, ds) in splits.iter().enumerate() {
        for e in &ds.examples {
            let p = &e.provenance;
            for src in &p.sources {
                let key = (p.file_id.as_str(), p.segment, src.as_str());
                let first = *triples.entry(key).or_insert(si);
                if first != si && seen_pairs.insert((key, first, si)) {
                    violations.push(Violation::Segment {
                        file_id: p.file_id.clone(),
                        segment: p.segment,
                        source: src.clone(),
                        splits: (SPLIT_NAMES[first], SPLIT_NAMES[si]),
                    });
                }
            }
        }
    }
    if check == LeakageCheck::SegmentsAndDomains {
        let mut reported = BTreeSet::new();
        for (si, ds) in splits.iter().enumerate() {
            for e in &ds.examples {
                let d = e.provenance.domain_id.as_str();
                let first = *domains.entry(d).or_insert(si);
                if first != si && reported.insert((d, first, si)) {
                    violations.push(Violation::Domain {
                        domain_id: d.to_string(),
                        splits: (SPLIT_NAMES[first], SPLIT_NAMES[si]),
                    });
                }
            }
        }
    }
    LeakageReport { violations }
}
