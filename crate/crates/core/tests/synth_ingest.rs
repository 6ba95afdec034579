use selemb::ingest::{self, Recording};
use selemb::loaders::{build_single, BuildOptions};
use selemb::signal::{self, DEFAULT_SEGMENT_LEN};
use selemb::synth::{self, BenchmarkSpec, DomainSpec, FaultSpec, SensorModel};

const RATE: f64 = 10_240.0;

fn quiet_domain(amplitude: f64) -> DomainSpec {
    DomainSpec {
        domain_id: "D0".into(),
        class_amplitude: vec![amplitude; 8],
        noise_scale: 1.0,
        floor_sigma: 0.0,
        seed: 17,
    }
}

fn sensors(noise: f64) -> Vec<SensorModel> {
    vec![
        SensorModel {
            source_id: "acc".into(),
            gain: 1.0,
            lowpass: 0.0,
            noise_sigma: noise,
        },
        SensorModel {
            source_id: "mic".into(),
            gain: 3.0,
            lowpass: 0.7,
            noise_sigma: noise,
        },
    ]
}

fn averaged_spectrum(rec: &Recording, source: &str) -> Vec<f64> {
    let stream = rec.stream(source).unwrap();
    let segs = signal::segment_stream(stream, DEFAULT_SEGMENT_LEN).unwrap();
    assert!(segs.len() >= 20);
    let mut avg = vec![0.0; DEFAULT_SEGMENT_LEN / 2];
    for s in &segs {
        for (a, v) in avg.iter_mut().zip(signal::fft_magnitude(s).unwrap().bins) {
            *a += v / segs.len() as f64;
        }
    }
    avg
}

/// 1-based bin numbers of the `k` largest values.
fn top_bins(spectrum: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..spectrum.len()).collect();
    idx.sort_by(|&a, &b| spectrum[b].total_cmp(&spectrum[a]));
    idx.into_iter().take(k).map(|i| i + 1).collect()
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

#[test]
fn fault_lines_sit_at_multiples_of_the_impulse_bin() {
    let spec = BenchmarkSpec::desk_scale(0);
    let fault = spec.classes.iter().find(|c| c.impulse_rate == 90.0).unwrap();
    let rec = synth::generate_recording(fault, &sensors(0.02), &quiet_domain(1.0), 2.5, RATE, 5, "f").unwrap();
    let line = (90.0 * DEFAULT_SEGMENT_LEN as f64 / RATE) as usize;
    assert_eq!(line, 9);
    for source in ["acc", "mic"] {
        let avg = averaged_spectrum(&rec, source);
        for b in top_bins(&avg, 5) {
            assert_eq!(b % line, 0, "{source}: peak at bin {b}");
        }
    }
}

#[test]
fn top_peak_is_shared_across_sensors() {
    let spec = BenchmarkSpec::desk_scale(0);
    for fault in &spec.classes {
        let rec = synth::generate_recording(fault, &sensors(0.01), &quiet_domain(1.0), 2.5, RATE, 9, "f").unwrap();
        let acc = rec.stream("acc").unwrap();
        assert!(0.01 < 0.1 * rms(&acc.samples));
        let a = top_bins(&averaged_spectrum(&rec, "acc"), 1);
        let m = top_bins(&averaged_spectrum(&rec, "mic"), 1);
        assert_eq!(a, m, "class {}", fault.class_id);
    }
}

#[test]
fn amplitude_scaling_is_linear_and_keeps_peaks() {
    let fault = FaultSpec {
        class_id: 2,
        impulse_rate: 130.0,
        resonance: 1900.0,
        impulse_amplitude: 1.0,
        decay: 300.0,
    };
    let base = synth::generate_recording(&fault, &sensors(0.0), &quiet_domain(1.0), 2.0, RATE, 3, "f").unwrap();
    let scaled = synth::generate_recording(&fault, &sensors(0.0), &quiet_domain(2.0), 2.0, RATE, 3, "f").unwrap();
    for (a, b) in base.streams.iter().zip(&scaled.streams) {
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_eq!(2.0 * x, *y);
        }
        let pa = top_bins(&averaged_spectrum(&base, &a.meta.source_id), 3);
        let pb = top_bins(&averaged_spectrum(&scaled, &b.meta.source_id), 3);
        assert_eq!(pa, pb);
    }
}

#[test]
fn silent_faults_carry_no_class_signal() {
    let mut spec = BenchmarkSpec::with_counts(4, 2, 2, 2.0, 1).unwrap();
    for c in &mut spec.classes {
        c.impulse_amplitude = 0.0;
    }
    let recs = spec.recordings(true).unwrap();
    let opts = BuildOptions::default();
    let train = build_single(&recs[..4], "acc", Some(4), &opts).unwrap();
    let test = build_single(&recs[4..], "acc", Some(4), &opts).unwrap();
    let cfg = selemb::nn::TrainConfig {
        epochs: 3,
        ..Default::default()
    };
    let model = selemb::nn::train(selemb::nn::CnnConfig::new(1, 4), &train, &test.subset(&[]), &cfg).unwrap();
    let acc = selemb::nn::evaluate(&model.model, &test, true).unwrap().accuracy;
    // 4 classes x 20 segments; chance is 1/4 with binomial sd about 0.05.
    assert!((acc - 0.25).abs() < 0.2, "accuracy {acc}");
}

#[test]
fn written_benchmark_reads_back() {
    let dir = tempfile::tempdir().unwrap();
    let spec = BenchmarkSpec::with_counts(3, 2, 2, 0.25, 4).unwrap();
    let manifest = synth::generate_benchmark(&spec, dir.path()).unwrap();
    assert_eq!(manifest.n_classes(), 3);
    assert_eq!(manifest.files.len(), 6);
    assert_eq!(manifest.domains(), ["D0", "D1"]);
    let memory = spec.recordings(false).unwrap();
    for (entry, mem) in manifest.files.iter().zip(&memory) {
        let disk = ingest::read_recording(entry, manifest.rate).unwrap();
        assert_eq!(disk.class_id, mem.class_id);
        assert_eq!(disk.domain_id, mem.domain_id);
        assert_eq!(disk.source_ids(), mem.source_ids());
        for (d, m) in disk.streams.iter().zip(&mem.streams) {
            assert_eq!(d.samples.len(), m.samples.len());
            for (x, y) in d.samples.iter().zip(&m.samples) {
                assert!((x - y).abs() <= 5e-7 + 1e-12 * y.abs());
            }
        }
        let cached = ingest::read_recording_cached(entry, manifest.rate).unwrap();
        assert!(ingest::cache_path(entry).exists());
        let again = ingest::read_recording_cached(entry, manifest.rate).unwrap();
        assert_eq!(cached, disk);
        assert_eq!(again, disk);
    }
}
