//! Segmentation of raw sensor streams and FFT magnitude features.

use std::cell::RefCell;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default window length in samples.
pub const DEFAULT_SEGMENT_LEN: usize = 1024;

/// Identity carried by every stream, segment and spectrum.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamMeta {
    pub source_id: String,
    pub class_id: u32,
    pub domain_id: String,
    pub file_id: String,
}

/// One sensor's raw time-domain samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceStream {
    pub samples: Vec<f64>,
    /// Sample rate in Hz.
    pub rate: f64,
    pub meta: StreamMeta,
}

impl SourceStream {
    pub fn new(samples: Vec<f64>, rate: f64, meta: StreamMeta) -> Result<Self> {
        let stream = Self {
            samples,
            rate,
            meta,
        };
        stream.validate()?;
        Ok(stream)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Error::InvalidStream {
            source_id: self.meta.source_id.clone(),
            reason,
        };
        if self.samples.is_empty() {
            return Err(fail("no samples".into()));
        }
        if !(self.rate.is_finite() && self.rate > 0.0) {
            return Err(fail(format!("rate must be positive, got {}", self.rate)));
        }
        if let Some(i) = self.samples.iter().position(|x| !x.is_finite()) {
            return Err(fail(format!("non-finite sample at index {i}")));
        }
        Ok(())
    }
}

/// A fixed-length, non-overlapping window of a stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub values: Vec<f64>,
    pub meta: StreamMeta,
    /// Window ordinal; covers parent samples `[index * L, (index + 1) * L)`.
    pub index: usize,
}

/// One-sided FFT magnitudes of a segment, bins `1..=L/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub bins: Vec<f64>,
    pub meta: StreamMeta,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StandardizeMode {
    #[default]
    None,
    PerSegmentZscore,
}

fn check_window(len: usize) -> Result<()> {
    if len < 2 {
        return Err(Error::Config(format!("segment length must be >= 2, got {len}")));
    }
    Ok(())
}

/// Number of full windows of length `len` in `n` samples.
pub fn segment_count(n: usize, len: usize) -> usize {
    n / len
}

/// Splits a stream into `floor(N / len)` windows; the trailing remainder is dropped.
pub fn segment_stream(stream: &SourceStream, len: usize) -> Result<Vec<Segment>> {
    check_window(len)?;
    let n = stream.samples.len();
    if n < len {
        return Err(Error::NoFullWindow { len: n, window: len });
    }
    Ok(stream
        .samples
        .chunks_exact(len)
        .enumerate()
        .map(|(index, chunk)| Segment {
            values: chunk.to_vec(),
            meta: stream.meta.clone(),
            index,
        })
        .collect())
}

/// Window `index` of `stream` without materializing the others.
pub fn segment_at(stream: &SourceStream, len: usize, index: usize) -> Result<Segment> {
    check_window(len)?;
    let count = segment_count(stream.samples.len(), len);
    if count == 0 {
        return Err(Error::NoFullWindow {
            len: stream.samples.len(),
            window: len,
        });
    }
    if index >= count {
        return Err(Error::Config(format!(
            "segment {index} out of range for {count} windows"
        )));
    }
    Ok(Segment {
        values: stream.samples[index * len..(index + 1) * len].to_vec(),
        meta: stream.meta.clone(),
        index,
    })
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Full two-sided DFT `X_k = sum_n x[n] e^{-i 2 pi k n / L}` (unnormalized).
pub fn fft_full(values: &[f64]) -> Result<Vec<Complex64>> {
    let len = values.len();
    if len < 2 || !len.is_power_of_two() {
        return Err(Error::Config(format!(
            "FFT length must be a power of two >= 2, got {len}"
        )));
    }
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft_forward(len));
    let mut buf: Vec<Complex64> = values.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fft.process(&mut buf);
    Ok(buf)
}

/// Magnitudes of bins `1..=L/2` (DC and Nyquist dropped), unscaled.
pub fn magnitude_bins(values: &[f64]) -> Result<Vec<f64>> {
    let full = fft_full(values)?;
    let half = values.len() / 2;
    Ok(full[1..=half].iter().map(|c| c.norm()).collect())
}

pub fn fft_magnitude(segment: &Segment) -> Result<Spectrum> {
    Ok(Spectrum {
        bins: magnitude_bins(&segment.values)?,
        meta: segment.meta.clone(),
        index: segment.index,
    })
}

pub fn standardize(spectrum: Spectrum, mode: StandardizeMode) -> Spectrum {
    match mode {
        StandardizeMode::None => spectrum,
        StandardizeMode::PerSegmentZscore => {
            let bins = zscore(&spectrum.bins);
            Spectrum { bins, ..spectrum }
        }
    }
}

/// `(x - mean) / max(std, 1e-12)` with the population standard deviation.
pub fn zscore(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-12);
    values.iter().map(|x| (x - mean) / std).collect()
}
