use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use fhss_core::detection;
use fhss_core::pipeline::{self, PipelineConfig};
use fhss_core::spectrogram::{self, StftConfig};
use fhss_core::synth::Scenario;
use fhss_core::Parallelism;

const MODES: [(&str, Parallelism); 2] = [
    ("sequential", Parallelism::Sequential),
    ("rayon", Parallelism::Rayon),
];

fn short_capture() -> fhss_core::iq_io::IqRecording {
    let mut s = Scenario::futaba(5.0, 11);
    s.duration_s = 10e-3;
    s.synthesize().expect("synthesis").recording
}

fn stages(c: &mut Criterion) {
    let rec = short_capture();
    let stft = StftConfig::with_window(1024);
    let spec = spectrogram::compute(&rec, &stft, Parallelism::Sequential).unwrap();
    let t = detection::estimate_threshold(&spec, 0.2).unwrap();
    let mask = detection::binarize(&spec, t.mu);

    let mut g = c.benchmark_group("stft");
    g.sample_size(10);
    for (name, par) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &par, |b, &par| {
            b.iter(|| spectrogram::compute(&rec, &stft, par).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("closing");
    g.sample_size(20);
    for (name, par) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &par, |b, &par| {
            b.iter(|| detection::morph_close(&mask, 3, 5, par).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("pipeline");
    g.sample_size(10);
    for (name, par) in MODES {
        let cfg = PipelineConfig {
            parallelism: par,
            ..PipelineConfig::default()
        };
        g.bench_with_input(BenchmarkId::from_parameter(name), &cfg, |b, cfg| {
            b.iter(|| pipeline::run(&rec, cfg).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, stages);
criterion_main!(benches);
