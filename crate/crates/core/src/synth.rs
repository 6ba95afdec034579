//! Synthetic multi-sensor fault recordings.
//!
//! Each recording renders one shared latent signal and lets every sensor
//! observe it through its own gain, one-pole low-pass and noise. The latent is
//! a periodic train of decaying sinusoids (one impulse per fault period,
//! ringing at a resonance) over a class-independent broadband floor, so fault
//! lines sit at multiples of the impulse rate in every sensor while their
//! amplitudes depend on the sensor and the domain.

use std::f64::consts::PI;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::ingest::{self, ClassEntry, FileDoc, Manifest, ManifestDoc, Recording, SourceColumn};
use crate::rng;
use crate::signal::{SourceStream, StreamMeta, DEFAULT_SEGMENT_LEN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub class_id: u32,
    /// Characteristic fault frequency, Hz.
    pub impulse_rate: f64,
    /// Carrier excited by each impulse, Hz.
    pub resonance: f64,
    pub impulse_amplitude: f64,
    /// Exponential decay of each impulse response, 1/s.
    pub decay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorModel {
    pub source_id: String,
    pub gain: f64,
    /// One-pole smoothing `y[n] = (1 - a) x[n] + a y[n - 1]`, `a` in `[0, 1)`.
    pub lowpass: f64,
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub domain_id: String,
    /// Impulse amplitude multiplier per class, indexed by `class_id - 1`.
    pub class_amplitude: Vec<f64>,
    /// Multiplies sensor noise and the latent broadband floor.
    pub noise_scale: f64,
    /// Standard deviation of the latent broadband floor before `noise_scale`.
    pub floor_sigma: f64,
    pub seed: u64,
}

impl DomainSpec {
    fn amplitude(&self, class_id: u32) -> f64 {
        self.class_amplitude
            .get(class_id as usize - 1)
            .copied()
            .unwrap_or(1.0)
    }
}

fn invalid(msg: String) -> Error {
    Error::Config(msg)
}

fn validate(fault: &FaultSpec, sensors: &[SensorModel], domain: &DomainSpec, rate: f64) -> Result<()> {
    if !(rate.is_finite() && rate > 0.0) {
        return Err(invalid(format!("rate must be positive, got {rate}")));
    }
    let nyq = rate / 2.0;
    if fault.class_id == 0 {
        return Err(invalid("class ids start at 1".into()));
    }
    if !(fault.impulse_rate > 0.0 && fault.impulse_rate < nyq) {
        return Err(invalid(format!("impulse rate {} must lie in (0, {nyq})", fault.impulse_rate)));
    }
    if !(fault.resonance > 0.0 && fault.resonance < nyq) {
        return Err(invalid(format!("resonance {} must lie in (0, {nyq})", fault.resonance)));
    }
    if !(fault.impulse_amplitude >= 0.0 && fault.decay > 0.0) {
        return Err(invalid(format!(
            "class {}: amplitude must be >= 0 and decay > 0",
            fault.class_id
        )));
    }
    if sensors.is_empty() {
        return Err(invalid("at least one sensor is required".into()));
    }
    for s in sensors {
        if !(s.gain > 0.0 && (0.0..1.0).contains(&s.lowpass) && s.noise_sigma >= 0.0) {
            return Err(invalid(format!(
                "sensor {}: gain must be > 0, lowpass in [0, 1), noise >= 0",
                s.source_id
            )));
        }
    }
    if !(domain.noise_scale > 0.0 && domain.floor_sigma >= 0.0) || domain.class_amplitude.iter().any(|&a| !(a > 0.0)) {
        return Err(invalid(format!("domain {}: scales must be positive", domain.domain_id)));
    }
    Ok(())
}

/// Shared latent signal: impulse train plus broadband floor.
fn render_latent(fault: &FaultSpec, domain: &DomainSpec, n: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut x = vec![0.0; n];
    let amp = fault.impulse_amplitude * domain.amplitude(fault.class_id);
    if amp > 0.0 {
        let period = 1.0 / fault.impulse_rate;
        let ring = ((1e4f64).ln() / fault.decay * rate).ceil() as usize + 1;
        let mut t0 = rng.gen_range(0.0..period);
        let end = n as f64 / rate;
        while t0 < end {
            let first = (t0 * rate).ceil() as usize;
            for (i, v) in x.iter_mut().enumerate().skip(first).take(ring) {
                let tau = i as f64 / rate - t0;
                *v += amp * (-fault.decay * tau).exp() * (2.0 * PI * fault.resonance * tau).sin();
            }
            t0 += period;
        }
    }
    let floor = domain.floor_sigma * domain.noise_scale;
    if floor > 0.0 {
        let normal = Normal::new(0.0, floor).unwrap();
        for v in &mut x {
            *v += normal.sample(rng);
        }
    }
    x
}

fn observe(latent: &[f64], sensor: &SensorModel, noise_scale: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let a = sensor.lowpass;
    let sigma = sensor.noise_sigma * noise_scale;
    let normal = (sigma > 0.0).then(|| Normal::new(0.0, sigma).unwrap());
    let mut y = 0.0;
    latent
        .iter()
        .map(|&x| {
            y = (1.0 - a) * x + a * y;
            sensor.gain * y + normal.map_or(0.0, |d| d.sample(rng))
        })
        .collect()
}

/// Renders one recording, fully determined by the specs and `seed`.
pub fn generate_recording(
    fault: &FaultSpec,
    sensors: &[SensorModel],
    domain: &DomainSpec,
    duration: f64,
    rate: f64,
    seed: u64,
    file_id: &str,
) -> Result<Recording> {
    validate(fault, sensors, domain, rate)?;
    let n = (duration * rate).floor();
    if !(n >= (2 * DEFAULT_SEGMENT_LEN) as f64) {
        return Err(invalid(format!(
            "duration {duration} s at {rate} Hz gives fewer than 2 windows of {DEFAULT_SEGMENT_LEN}"
        )));
    }
    let n = n as usize;
    let mut g = ChaCha8Rng::seed_from_u64(rng::mix(seed, domain.seed));
    let latent = render_latent(fault, domain, n, rate, &mut g);
    let streams = sensors
        .iter()
        .map(|s| {
            let samples = observe(&latent, s, domain.noise_scale, &mut g);
            SourceStream::new(
                samples,
                rate,
                StreamMeta {
                    source_id: s.source_id.clone(),
                    class_id: fault.class_id,
                    domain_id: domain.domain_id.clone(),
                    file_id: file_id.to_string(),
                },
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Recording::new(streams, fault.class_id, &domain.domain_id, file_id)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub dataset_name: String,
    pub classes: Vec<FaultSpec>,
    pub sensors: Vec<SensorModel>,
    pub domains: Vec<DomainSpec>,
    pub files_per_class: usize,
    /// Seconds per file.
    pub duration: f64,
    pub rate: f64,
    pub seed: u64,
}

const IMPULSE_RATES: [f64; 8] = [50.0, 90.0, 130.0, 170.0, 70.0, 110.0, 150.0, 190.0];
const RESONANCES: [f64; 8] = [1200.0, 2600.0, 1900.0, 3300.0, 1500.0, 2200.0, 2900.0, 3700.0];
const AMPLITUDES: [f64; 8] = [1.0, 0.8, 1.2, 0.9, 1.1, 0.7, 1.3, 1.0];
const SENSOR_LOWPASS: [f64; 4] = [0.0, 0.7, 0.4, 0.85];
/// Roughly undoes each sensor's low-pass loss near 2 kHz so that every sensor
/// carries comparable class information.
const SENSOR_GAIN: [f64; 4] = [1.0, 3.0, 1.5, 7.0];
const SENSOR_NAMES: [&str; 4] = ["acc", "mic", "acc2", "mic2"];
const NOISE_SIGMA: f64 = 0.5;
const FLOOR_SIGMA: f64 = 0.5;

impl BenchmarkSpec {
    /// The desk-scale benchmark: 4 classes, 2 sensors, 3 domains, 10240 Hz,
    /// 30 s per file. The last domain is the held-out shifted one.
    pub fn desk_scale(seed: u64) -> Self {
        Self::with_counts(4, 2, 3, 30.0, seed).expect("default counts are valid")
    }

    /// Benchmark with the given counts. Domains other than the last use mild
    /// per-class amplitude variation; the last domain scales every class by
    /// 1.5 and doubles the noise.
    pub fn with_counts(classes: usize, sensors: usize, domains: usize, duration: f64, seed: u64) -> Result<Self> {
        if !(2..=IMPULSE_RATES.len()).contains(&classes) {
            return Err(invalid(format!("classes must be in 2..={}, got {classes}", IMPULSE_RATES.len())));
        }
        if !(2..=SENSOR_NAMES.len()).contains(&sensors) {
            return Err(invalid(format!("sensors must be in 2..={}, got {sensors}", SENSOR_NAMES.len())));
        }
        if domains < 2 {
            return Err(invalid(format!(
                "at least 2 domains are needed for cross-domain evaluation, got {domains}"
            )));
        }
        let classes = (0..classes)
            .map(|j| FaultSpec {
                class_id: j as u32 + 1,
                impulse_rate: IMPULSE_RATES[j],
                resonance: RESONANCES[j],
                impulse_amplitude: AMPLITUDES[j],
                decay: 300.0,
            })
            .collect::<Vec<_>>();
        let sensors = (0..sensors)
            .map(|s| SensorModel {
                source_id: SENSOR_NAMES[s].into(),
                gain: SENSOR_GAIN[s],
                lowpass: SENSOR_LOWPASS[s],
                noise_sigma: NOISE_SIGMA,
            })
            .collect();
        let n_c = classes.len();
        let domains = (0..domains)
            .map(|d| {
                let held_out = d == domains - 1;
                let class_amplitude = (0..n_c)
                    .map(|j| {
                        if held_out {
                            1.5
                        } else {
                            1.0 - 0.15 * d as f64 + 0.05 * ((j + d) % 3) as f64
                        }
                    })
                    .collect();
                DomainSpec {
                    domain_id: format!("D{d}"),
                    class_amplitude,
                    noise_scale: if held_out { 2.0 } else { 1.0 },
                    floor_sigma: FLOOR_SIGMA,
                    seed: 1000 + d as u64,
                }
            })
            .collect();
        Ok(Self {
            dataset_name: "synthetic-faults".into(),
            classes,
            sensors,
            domains,
            files_per_class: 1,
            duration,
            rate: 10_240.0,
            seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 || self.sensors.len() < 2 || self.domains.len() < 2 {
            return Err(invalid(format!(
                "benchmark needs >= 2 classes, sensors and domains (got {}, {}, {})",
                self.classes.len(),
                self.sensors.len(),
                self.domains.len()
            )));
        }
        if self.files_per_class == 0 {
            return Err(invalid("files_per_class must be >= 1".into()));
        }
        for (j, c) in self.classes.iter().enumerate() {
            if c.class_id != j as u32 + 1 {
                return Err(invalid(format!("class ids must be 1..={} in order", self.classes.len())));
            }
        }
        Ok(())
    }

    /// `(domain index, class index, file index, relative path)` for every file.
    pub fn file_plan(&self) -> Vec<(usize, usize, usize, String)> {
        let mut plan = Vec::new();
        for (d, dom) in self.domains.iter().enumerate() {
            for (j, c) in self.classes.iter().enumerate() {
                for k in 0..self.files_per_class {
                    plan.push((d, j, k, format!("{}_c{}_f{k}.csv", dom.domain_id, c.class_id)));
                }
            }
        }
        plan
    }

    pub fn file_seed(&self, d: usize, j: usize, k: usize) -> u64 {
        rng::mix(rng::mix(self.seed, d as u64), (j * 1000 + k) as u64)
    }

    /// Generates every recording in memory, in manifest order.
    pub fn recordings(&self, parallel: bool) -> Result<Vec<Recording>> {
        self.validate()?;
        exec::map(&self.file_plan(), parallel, |(d, j, k, name)| {
            generate_recording(
                &self.classes[*j],
                &self.sensors,
                &self.domains[*d],
                self.duration,
                self.rate,
                self.file_seed(*d, *j, *k),
                name,
            )
        })
        .into_iter()
        .collect()
    }
}

fn write_csv(path: &Path, rec: &Recording) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
    let header: Vec<&str> = rec.source_ids();
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    let mut line = String::new();
    for i in 0..rec.len() {
        line.clear();
        for (c, s) in rec.streams.iter().enumerate() {
            if c > 0 {
                line.push(',');
            }
            line.push_str(&format!("{:.6}", s.samples[i]));
        }
        line.push('\n');
        w.write_all(line.as_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Writes the benchmark's CSV files and `manifest.toml` into `out_dir` and
/// returns the loaded manifest.
pub fn generate_benchmark(spec: &BenchmarkSpec, out_dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let plan = spec.file_plan();
    let written: Vec<Result<()>> = exec::map(&plan, true, |(d, j, k, name)| {
        let rec = generate_recording(
            &spec.classes[*j],
            &spec.sensors,
            &spec.domains[*d],
            spec.duration,
            spec.rate,
            spec.file_seed(*d, *j, *k),
            name,
        )?;
        write_csv(&out_dir.join(name), &rec)
    });
    written.into_iter().collect::<Result<()>>()?;

    let doc = ManifestDoc {
        dataset_name: spec.dataset_name.clone(),
        rate: spec.rate,
        classes: spec
            .classes
            .iter()
            .map(|c| ClassEntry {
                id: c.class_id,
                label: format!("fault-{}hz", c.impulse_rate),
            })
            .collect(),
        files: plan
            .iter()
            .map(|(d, j, _, name)| FileDoc {
                path: name.clone(),
                class_id: spec.classes[*j].class_id,
                domain_id: spec.domains[*d].domain_id.clone(),
                sources: spec
                    .sensors
                    .iter()
                    .map(|s| SourceColumn {
                        column: s.source_id.clone(),
                        source_id: s.source_id.clone(),
                    })
                    .collect(),
            })
            .collect(),
    };
    let manifest_path: PathBuf = out_dir.join("manifest.toml");
    fs::write(&manifest_path, ingest::render_manifest(&doc)).map_err(|e| Error::io(&manifest_path, e))?;
    ingest::load_manifest(&manifest_path)
}
