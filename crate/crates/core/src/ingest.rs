//! Manifest-driven loading of multi-sensor recordings.
//!
//! # Manifest format
//!
//! A TOML document:
//!
//! ```toml
//! dataset_name = "bearing-rig"
//! rate = 10240.0            # Hz, shared by every file
//!
//! [[classes]]
//! id = 1                    # ids are contiguous from 1
//! label = "healthy"
//!
//! [[files]]
//! path = "D0/healthy_0.csv" # relative to the manifest's directory
//! class_id = 1
//! domain_id = "D0"
//! sources = [
//!     { column = "acc_x", source_id = "acc" },
//!     { column = "mic",   source_id = "mic" },
//! ]
//! ```
//!
//! Data files are comma-separated text with a header row, one column per
//! sensor and one row per sample instant. Columns not listed in `sources` are
//! ignored. Trailing blank cells are trimmed per column; after trimming every
//! declared column must have the same length.
//!
//! # Binary cache
//!
//! [`write_cache`] stores a recording next to its CSV as `<csv>.bin`:
//!
//! | offset | size | field                         |
//! |--------|------|-------------------------------|
//! | 0      | 4    | magic `SEMB`                  |
//! | 4      | 4    | version, u32 LE (= 1)         |
//! | 8      | 4    | channel count, u32 LE         |
//! | 12     | 4    | reserved, zero                |
//! | 16     | 8    | samples per channel, u64 LE   |
//! | 24     | 8    | rate in Hz, f64 LE            |
//! | 32     | ...  | channels in declared order, each as f64 LE samples |

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{SourceStream, StreamMeta};

pub const CACHE_MAGIC: &[u8; 4] = b"SEMB";
pub const CACHE_VERSION: u32 = 1;
const CACHE_HEADER_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub id: u32,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceColumn {
    pub column: String,
    pub source_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestDoc {
    pub dataset_name: String,
    pub rate: f64,
    pub classes: Vec<ClassEntry>,
    pub files: Vec<FileDoc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDoc {
    pub path: String,
    pub class_id: u32,
    pub domain_id: String,
    pub sources: Vec<SourceColumn>,
}

/// A validated manifest with data paths resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub dataset_name: String,
    pub rate: f64,
    pub classes: Vec<ClassEntry>,
    pub files: Vec<FileEntry>,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileEntry {
    /// Resolved location of the data file.
    pub path: PathBuf,
    /// The path as written in the manifest; identifies the file in provenance.
    pub file_id: String,
    pub class_id: u32,
    pub domain_id: String,
    pub sources: Vec<SourceColumn>,
}

impl Manifest {
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    /// Domain ids in order of first appearance.
    pub fn domains(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for f in &self.files {
            if !out.contains(&f.domain_id) {
                out.push(f.domain_id.clone());
            }
        }
        out
    }

    /// Source ids of the first file, in declared order.
    pub fn source_ids(&self) -> Vec<String> {
        self.files
            .first()
            .map(|f| f.sources.iter().map(|s| s.source_id.clone()).collect())
            .unwrap_or_default()
    }
}

/// A set of simultaneously sampled streams from one data file.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub streams: Vec<SourceStream>,
    pub class_id: u32,
    pub domain_id: String,
    pub file_id: String,
}

impl Recording {
    /// Builds a recording, enforcing equal lengths, equal rates and distinct sources.
    pub fn new(streams: Vec<SourceStream>, class_id: u32, domain_id: &str, file_id: &str) -> Result<Self> {
        let first = streams
            .first()
            .ok_or_else(|| Error::InconsistentSources(format!("recording {file_id} has no streams")))?;
        let (len, rate) = (first.samples.len(), first.rate);
        let mut seen = BTreeSet::new();
        for s in &streams {
            s.validate()?;
            if s.samples.len() != len {
                return Err(Error::UnequalLengths {
                    path: PathBuf::from(file_id),
                    detail: format!(
                        "{} has {} samples, {} has {len}",
                        s.meta.source_id,
                        s.samples.len(),
                        first.meta.source_id
                    ),
                });
            }
            if s.rate != rate {
                return Err(Error::InconsistentSources(format!(
                    "recording {file_id}: {} sampled at {} Hz, {} at {rate} Hz",
                    s.meta.source_id, s.rate, first.meta.source_id
                )));
            }
            if !seen.insert(s.meta.source_id.as_str()) {
                return Err(Error::InconsistentSources(format!(
                    "recording {file_id}: duplicate source {}",
                    s.meta.source_id
                )));
            }
        }
        Ok(Self {
            streams,
            class_id,
            domain_id: domain_id.to_string(),
            file_id: file_id.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.streams[0].samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rate(&self) -> f64 {
        self.streams[0].rate
    }

    pub fn source_ids(&self) -> Vec<&str> {
        self.streams.iter().map(|s| s.meta.source_id.as_str()).collect()
    }

    pub fn stream(&self, source_id: &str) -> Option<&SourceStream> {
        self.streams.iter().find(|s| s.meta.source_id == source_id)
    }
}

fn manifest_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Manifest {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

pub fn parse_manifest(text: &str, path: &Path) -> Result<Manifest> {
    let doc: ManifestDoc = toml::from_str(text).map_err(|e| manifest_err(path, e.to_string().replace('\n', " ")))?;
    validate_manifest(doc, path)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path)
}

fn validate_manifest(doc: ManifestDoc, path: &Path) -> Result<Manifest> {
    if !(doc.rate.is_finite() && doc.rate > 0.0) {
        return Err(manifest_err(path, format!("rate must be positive, got {}", doc.rate)));
    }
    if doc.classes.is_empty() {
        return Err(manifest_err(path, "no classes declared"));
    }
    let mut ids = BTreeSet::new();
    for (i, c) in doc.classes.iter().enumerate() {
        if !ids.insert(c.id) {
            return Err(manifest_err(path, format!("classes[{i}]: duplicate class id {}", c.id)));
        }
    }
    let max = *ids.iter().next_back().unwrap();
    if let Some(missing) = (1..=max).find(|id| !ids.contains(id)) {
        return Err(Error::NonContiguousClasses {
            path: path.to_path_buf(),
            missing,
        });
    }
    // ids is contiguous 1..=max here, so max == classes.len()
    let mut classes = doc.classes;
    classes.sort_by_key(|c| c.id);

    if doc.files.is_empty() {
        return Err(manifest_err(path, "no files declared"));
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut files = Vec::with_capacity(doc.files.len());
    for (i, f) in doc.files.into_iter().enumerate() {
        let loc = format!("files[{i}] ({})", f.path);
        if f.class_id == 0 || f.class_id > max {
            return Err(manifest_err(path, format!("{loc}: undeclared class id {}", f.class_id)));
        }
        if f.domain_id.is_empty() {
            return Err(manifest_err(path, format!("{loc}: empty domain_id")));
        }
        if f.sources.is_empty() {
            return Err(manifest_err(path, format!("{loc}: no source columns")));
        }
        let mut seen = BTreeSet::new();
        for s in &f.sources {
            if !seen.insert(s.source_id.as_str()) {
                return Err(manifest_err(path, format!("{loc}: duplicate source id {}", s.source_id)));
            }
        }
        let resolved = base.join(&f.path);
        if !resolved.is_file() {
            return Err(Error::DanglingReference {
                manifest: path.to_path_buf(),
                file: resolved,
            });
        }
        files.push(FileEntry {
            path: resolved,
            file_id: f.path,
            class_id: f.class_id,
            domain_id: f.domain_id,
            sources: f.sources,
        });
    }
    Ok(Manifest {
        dataset_name: doc.dataset_name,
        rate: doc.rate,
        classes,
        files,
        path: path.to_path_buf(),
    })
}

/// Renders a manifest document as TOML.
pub fn render_manifest(doc: &ManifestDoc) -> String {
    toml::to_string(doc).expect("manifest documents always serialize")
}

/// Reads the declared columns of one delimited-text data file.
pub fn read_recording(entry: &FileEntry, rate: f64) -> Result<Recording> {
    let columns = read_columns(entry)?;
    build_recording(entry, rate, columns)
}

fn build_recording(entry: &FileEntry, rate: f64, columns: Vec<Vec<f64>>) -> Result<Recording> {
    let streams = entry
        .sources
        .iter()
        .zip(columns)
        .map(|(src, samples)| {
            SourceStream::new(
                samples,
                rate,
                StreamMeta {
                    source_id: src.source_id.clone(),
                    class_id: entry.class_id,
                    domain_id: entry.domain_id.clone(),
                    file_id: entry.file_id.clone(),
                },
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Recording::new(streams, entry.class_id, &entry.domain_id, &entry.file_id)
}

fn read_columns(entry: &FileEntry) -> Result<Vec<Vec<f64>>> {
    let path = &entry.path;
    let csv_err = |source| Error::Csv {
        path: path.clone(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let header = reader.headers().map_err(csv_err)?.clone();
    let positions = entry
        .sources
        .iter()
        .map(|s| {
            header.iter().position(|h| h == s.column).ok_or_else(|| Error::MissingColumn {
                path: path.clone(),
                column: s.column.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut raw: Vec<Vec<String>> = vec![Vec::new(); positions.len()];
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        for (col, &pos) in raw.iter_mut().zip(&positions) {
            col.push(record.get(pos).unwrap_or("").to_string());
        }
    }

    let mut columns = Vec::with_capacity(raw.len());
    for (cells, src) in raw.iter().zip(&entry.sources) {
        let effective = cells.iter().rposition(|c| !c.is_empty()).map_or(0, |i| i + 1);
        let mut values = Vec::with_capacity(effective);
        for (i, cell) in cells[..effective].iter().enumerate() {
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(v),
                _ => {
                    return Err(Error::NonNumeric {
                        path: path.clone(),
                        row: i + 1,
                        column: src.column.clone(),
                        value: cell.clone(),
                    })
                }
            }
        }
        columns.push(values);
    }
    let first = columns[0].len();
    if let Some((i, c)) = columns.iter().enumerate().find(|(_, c)| c.len() != first) {
        return Err(Error::UnequalLengths {
            path: path.clone(),
            detail: format!(
                "column \"{}\" has {} values, \"{}\" has {first}",
                entry.sources[i].column,
                c.len(),
                entry.sources[0].column
            ),
        });
    }
    if first == 0 {
        return Err(Error::InvalidStream {
            source_id: entry.sources[0].source_id.clone(),
            reason: format!("{}: no samples", path.display()),
        });
    }
    Ok(columns)
}

pub fn cache_path(entry: &FileEntry) -> PathBuf {
    let mut p = entry.path.clone().into_os_string();
    p.push(".bin");
    PathBuf::from(p)
}

pub fn write_cache(recording: &Recording, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut header = Vec::with_capacity(CACHE_HEADER_LEN);
    header.extend_from_slice(CACHE_MAGIC);
    header.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    header.extend_from_slice(&(recording.streams.len() as u32).to_le_bytes());
    header.extend_from_slice(&0u32.to_le_bytes());
    header.extend_from_slice(&(recording.len() as u64).to_le_bytes());
    header.extend_from_slice(&recording.rate().to_le_bytes());
    let io = |e| Error::io(path, e);
    w.write_all(&header).map_err(io)?;
    for s in &recording.streams {
        for x in &s.samples {
            w.write_all(&x.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Decoded cache contents: `(rate, channels)`.
pub fn read_cache(path: &Path) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_cache(&bytes)
}

fn decode_cache(bytes: &[u8]) -> Result<(f64, Vec<Vec<f64>>)> {
    if bytes.len() < CACHE_HEADER_LEN || &bytes[0..4] != CACHE_MAGIC {
        return Err(Error::Format("not a sample cache (bad magic)".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != CACHE_VERSION {
        return Err(Error::Format(format!("unsupported cache version {version}")));
    }
    let channels = u32_at(8) as usize;
    let len = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let rate = f64::from_le_bytes(bytes[24..32].try_into().unwrap());
    if channels == 0 || len == 0 {
        return Err(Error::Format("empty cache".into()));
    }
    let expected = channels
        .checked_mul(len)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(CACHE_HEADER_LEN));
    if expected != Some(bytes.len()) {
        return Err(Error::Format(format!(
            "cache size {} does not match header ({channels} x {len})",
            bytes.len()
        )));
    }
    let body = &bytes[CACHE_HEADER_LEN..];
    let out = body
        .chunks_exact(len * 8)
        .map(|ch| ch.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect())
        .collect();
    Ok((rate, out))
}

fn cache_is_fresh(csv: &Path, cache: &Path) -> bool {
    let mtime = |p: &Path| fs::metadata(p).and_then(|m| m.modified()).ok();
    matches!((mtime(csv), mtime(cache)), (Some(a), Some(b)) if b >= a)
}

/// Reads a recording through its binary cache, regenerating the cache when it
/// is missing, stale or does not match the entry.
pub fn read_recording_cached(entry: &FileEntry, rate: f64) -> Result<Recording> {
    let cache = cache_path(entry);
    if cache_is_fresh(&entry.path, &cache) {
        if let Ok((cached_rate, columns)) = read_cache(&cache) {
            if cached_rate == rate && columns.len() == entry.sources.len() {
                return build_recording(entry, rate, columns);
            }
        }
    }
    let rec = read_recording(entry, rate)?;
    write_cache(&rec, &cache)?;
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(dir: &Path, name: &str, cols: &[(&str, &str)]) -> FileEntry {
        FileEntry {
            path: dir.join(name),
            file_id: name.into(),
            class_id: 1,
            domain_id: "D0".into(),
            sources: cols
                .iter()
                .map(|(c, s)| SourceColumn {
                    column: c.to_string(),
                    source_id: s.to_string(),
                })
                .collect(),
        }
    }

    fn write_csv(dir: &Path, name: &str, text: &str) {
        fs::write(dir.join(name), text).unwrap();
    }

    fn two_col_csv(rows: usize) -> String {
        let mut s = String::from("acc,mic\n");
        for i in 0..rows {
            s.push_str(&format!("{},{}\n", i as f64 * 0.5, -(i as f64)));
        }
        s
    }

    #[test]
    fn reads_two_streams() {
        let dir = tempfile::tempdir().unwrap();
        write_csv(dir.path(), "a.csv", &two_col_csv(2048));
        let e = entry(dir.path(), "a.csv", &[("acc", "acc"), ("mic", "mic")]);
        let rec = read_recording(&e, 1000.0).unwrap();
        assert_eq!(rec.streams.len(), 2);
        assert!(rec.streams.iter().all(|s| s.samples.len() == 2048));
        assert_eq!(rec.source_ids(), vec!["acc", "mic"]);
        assert_eq!(rec.streams[1].samples[3], -3.0);
    }

    #[test]
    fn nan_cell_reports_row() {
        let dir = tempfile::tempdir().unwrap();
        let mut text = String::from("acc,mic\n");
        for i in 1..=20 {
            if i == 17 {
                text.push_str("NaN,1\n");
            } else {
                text.push_str("1,1\n");
            }
        }
        write_csv(dir.path(), "a.csv", &text);
        let e = entry(dir.path(), "a.csv", &[("acc", "acc"), ("mic", "mic")]);
        match read_recording(&e, 1000.0) {
            Err(Error::NonNumeric { row, column, .. }) => {
                assert_eq!(row, 17);
                assert_eq!(column, "acc");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_column() {
        let dir = tempfile::tempdir().unwrap();
        write_csv(dir.path(), "a.csv", &two_col_csv(4));
        let e = entry(dir.path(), "a.csv", &[("acc_z", "acc")]);
        assert!(matches!(read_recording(&e, 1.0), Err(Error::MissingColumn { column, .. }) if column == "acc_z"));
    }

    #[test]
    fn trailing_blanks_trimmed_but_unequal_is_error() {
        let dir = tempfile::tempdir().unwrap();
        write_csv(dir.path(), "ok.csv", "a,b\n1,2\n3,4\n,\n");
        let e = entry(dir.path(), "ok.csv", &[("a", "a"), ("b", "b")]);
        assert_eq!(read_recording(&e, 1.0).unwrap().len(), 2);

        write_csv(dir.path(), "bad.csv", "a,b\n1,2\n3,4\n5,\n");
        let e = entry(dir.path(), "bad.csv", &[("a", "a"), ("b", "b")]);
        assert!(matches!(read_recording(&e, 1.0), Err(Error::UnequalLengths { .. })));
    }

    #[test]
    fn recording_rejects_unequal_streams() {
        let m = |s: &str| StreamMeta {
            source_id: s.into(),
            class_id: 1,
            domain_id: "D".into(),
            file_id: "f".into(),
        };
        let a = SourceStream::new(vec![0.0; 10], 1.0, m("a")).unwrap();
        let b = SourceStream::new(vec![0.0; 9], 1.0, m("b")).unwrap();
        assert!(matches!(Recording::new(vec![a.clone(), b], 1, "D", "f"), Err(Error::UnequalLengths { .. })));
        let dup = a.clone();
        assert!(Recording::new(vec![a, dup], 1, "D", "f").is_err());
    }

    fn manifest_text(classes: &[u32], files: &[&str]) -> String {
        let mut doc = ManifestDoc {
            dataset_name: "t".into(),
            rate: 1000.0,
            classes: classes
                .iter()
                .map(|&id| ClassEntry {
                    id,
                    label: format!("c{id}"),
                })
                .collect(),
            files: vec![],
        };
        for (i, f) in files.iter().enumerate() {
            doc.files.push(FileDoc {
                path: f.to_string(),
                class_id: classes[i % classes.len()],
                domain_id: "D0".into(),
                sources: vec![
                    SourceColumn {
                        column: "acc".into(),
                        source_id: "acc".into(),
                    },
                    SourceColumn {
                        column: "mic".into(),
                        source_id: "mic".into(),
                    },
                ],
            });
        }
        render_manifest(&doc)
    }

    #[test]
    fn valid_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let names = ["r0.csv", "r1.csv", "r2.csv", "r3.csv"];
        for n in names {
            write_csv(dir.path(), n, &two_col_csv(8));
        }
        let p = dir.path().join("m.toml");
        fs::write(&p, manifest_text(&[1, 2, 3], &names)).unwrap();
        let m = load_manifest(&p).unwrap();
        assert_eq!(m.n_classes(), 3);
        assert_eq!(m.files.len(), 4);
        assert_eq!(m.source_ids(), vec!["acc", "mic"]);
        assert_eq!(m.files[2].path, dir.path().join("r2.csv"));
    }

    #[test]
    fn non_contiguous_classes_name_the_gap() {
        let dir = tempfile::tempdir().unwrap();
        write_csv(dir.path(), "r0.csv", &two_col_csv(8));
        let p = dir.path().join("m.toml");
        fs::write(&p, manifest_text(&[1, 3], &["r0.csv"])).unwrap();
        let err = load_manifest(&p).unwrap_err();
        assert!(matches!(err, Error::NonContiguousClasses { missing: 2, .. }));
        assert!(err.to_string().contains("class 2"));
    }

    #[test]
    fn dangling_reference_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.toml");
        fs::write(&p, manifest_text(&[1], &["run7.csv"])).unwrap();
        let err = load_manifest(&p).unwrap_err();
        assert!(matches!(err, Error::DanglingReference { .. }));
        assert!(err.to_string().contains("run7.csv"));
    }

    #[test]
    fn malformed_and_missing_manifest() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_manifest(dir.path().join("nope.toml")), Err(Error::Io { .. })));
        let p = dir.path().join("m.toml");
        fs::write(&p, "dataset_name = 3\n").unwrap();
        assert!(matches!(load_manifest(&p), Err(Error::Manifest { .. })));
    }

    #[test]
    fn cache_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut text = String::from("acc,mic\n");
        let vals: Vec<f64> = (0..300).map(|i| (i as f64 * 0.37).sin() * 1e-3 + 1.0 / 3.0).collect();
        for v in &vals {
            text.push_str(&format!("{v},{}\n", -v));
        }
        write_csv(dir.path(), "a.csv", &text);
        let e = entry(dir.path(), "a.csv", &[("acc", "acc"), ("mic", "mic")]);
        let from_csv = read_recording(&e, 512.0).unwrap();
        let first = read_recording_cached(&e, 512.0).unwrap();
        assert!(cache_path(&e).is_file());
        let second = read_recording_cached(&e, 512.0).unwrap();
        assert_eq!(from_csv, first);
        assert_eq!(first, second);
        for (a, b) in from_csv.streams[0].samples.iter().zip(&vals) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let (rate, cols) = read_cache(&cache_path(&e)).unwrap();
        assert_eq!(rate, 512.0);
        assert_eq!(cols.len(), 2);
    }

    #[test]
    fn corrupt_cache_rejected() {
        assert!(decode_cache(b"XXXX").is_err());
        let mut bytes = Vec::from(&CACHE_MAGIC[..]);
        bytes.extend_from_slice(&[0u8; 28]);
        assert!(decode_cache(&bytes).is_err());
    }
}
