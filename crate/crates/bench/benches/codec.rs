use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use hqstream::optimizer::{total_loss, Corpus, LossConfig, RateModel};
use hqstream::stream::{decode, encode, truncate, EncodeConfig, Target};
use hqstream::{sample_source, SourceConfig, StepSchedule};
use std::hint::black_box;

const LAYERS: usize = 8;

fn setup() -> (hqstream::LatentTensor, hqstream::GaussianParams, StepSchedule) {
    let (y, p) = sample_source(&SourceConfig::default()).unwrap();
    let s = StepSchedule::trit(LAYERS, y.shape().channels, 0.03).unwrap().to_f32().unwrap();
    (y, p, s)
}

fn codec(c: &mut Criterion) {
    let (y, p, s) = setup();
    let cfg = EncodeConfig::default();
    let bytes = encode(&y, &p, &s, &cfg).unwrap().to_bytes().unwrap();
    let mut g = c.benchmark_group("codec");
    g.throughput(Throughput::Elements(y.shape().len() as u64));
    g.sample_size(20);
    g.bench_function("encode", |b| b.iter(|| encode(black_box(&y), &p, &s, &cfg).unwrap()));
    g.bench_function("decode_full", |b| b.iter(|| decode(black_box(&bytes), Target::Full).unwrap()));
    g.bench_function("decode_half", |b| {
        b.iter(|| decode(black_box(&bytes), Target::Level(LAYERS as f64 / 2.0)).unwrap())
    });
    g.bench_function("truncate_fractional", |b| {
        b.iter(|| truncate(black_box(&bytes), Target::Level(5.37)).unwrap())
    });
    g.finish();
}

fn loss(c: &mut Criterion) {
    let (y, p, s) = setup();
    let corpus = Corpus::new(y, p).unwrap();
    let mut g = c.benchmark_group("loss");
    g.sample_size(10);
    for model in [RateModel::Exact, RateModel::Surrogate] {
        let cfg = LossConfig {
            model,
            ..LossConfig::standard(LAYERS)
        };
        g.bench_function(format!("{model:?}").to_lowercase(), |b| {
            b.iter_batched(|| s.clone(), |s| total_loss(&corpus, &s, &cfg).unwrap(), BatchSize::SmallInput)
        });
    }
    g.finish();
}

criterion_group!(benches, codec, loss);
criterion_main!(benches);
