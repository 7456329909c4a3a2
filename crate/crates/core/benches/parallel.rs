//! Rayon data-parallel map against the sequential path on two workloads:
//! mel spectrograms of one-second clips and per-token embedding inference.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use audioseg_core::corpus::synth_tone_dataset;
use audioseg_core::dsp::{MelFrontend, MelSpectrogram};
use audioseg_core::generator::{build_network, VggConfig};
use audioseg_core::par;

fn mel_batch(c: &mut Criterion) {
    let clips: Vec<_> = synth_tone_dataset(4, 8, 1).into_iter().map(|(w, _)| w).collect();
    let fe = MelFrontend::shared();
    let mut g = c.benchmark_group("mel_32_clips");
    g.sample_size(10);
    g.bench_function(BenchmarkId::new("map", "rayon"), |b| {
        b.iter(|| par::map(black_box(&clips), |w| fe.mel_spectrogram(w).unwrap()))
    });
    g.bench_function(BenchmarkId::new("map", "sequential"), |b| {
        b.iter(|| par::map_seq(black_box(&clips), |w| fe.mel_spectrogram(w).unwrap()))
    });
    g.finish();
}

fn embed_batch(c: &mut Criterion) {
    let specs: Vec<MelSpectrogram> = synth_tone_dataset(2, 4, 2)
        .iter()
        .map(|(w, _)| MelFrontend::shared().mel_spectrogram(w).unwrap())
        .collect();
    let model = build_network(5, &VggConfig::default(), 0).unwrap();
    let mut g = c.benchmark_group("embed_8_specs");
    g.sample_size(10);
    g.bench_function(BenchmarkId::new("map", "rayon"), |b| {
        b.iter(|| par::map(black_box(&specs), |s| model.embed(s).unwrap()))
    });
    g.bench_function(BenchmarkId::new("map", "sequential"), |b| {
        b.iter(|| par::map_seq(black_box(&specs), |s| model.embed(s).unwrap()))
    });
    g.finish();
}

criterion_group!(benches, mel_batch, embed_batch);
criterion_main!(benches);
