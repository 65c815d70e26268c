use criterion::{criterion_group, criterion_main, Criterion};
use guicode_bench::{desk_examples, desk_model};
use guicode_core::decode::{sample_beam, sample_greedy, ImageConditioned};
use guicode_core::dsl::{serialize, tokenize, Vocabulary};
use guicode_core::markup::{compile, Target};
use guicode_core::raster::{rasterize, RenderTheme};
use guicode_core::synth::{synthesize_ast, SynthParams};
use guicode_core::train::{TrainConfig, Trainer};
use std::hint::black_box;

fn bench_front_end(c: &mut Criterion) {
    let ast = synthesize_ast(&SynthParams::full(3)).unwrap();
    let text = serialize(&ast);
    let theme = RenderTheme::default();
    c.bench_function("synthesize full", |b| {
        b.iter(|| synthesize_ast(black_box(&SynthParams::full(3))).unwrap())
    });
    c.bench_function("tokenize", |b| b.iter(|| tokenize(black_box(&text)).unwrap()));
    c.bench_function("rasterize 256", |b| {
        b.iter(|| rasterize(black_box(&ast), 256, 256, &theme).unwrap())
    });
    c.bench_function("compile web", |b| {
        b.iter(|| compile(black_box(&ast), Target::Web))
    });
}

fn bench_model(c: &mut Criterion) {
    let vocab = Vocabulary::standard();
    let examples = desk_examples(4);
    let model = desk_model();
    c.bench_function("encode image desk", |b| {
        b.iter(|| model.encode_image(black_box(&examples[0].image)).unwrap())
    });
    let src = ImageConditioned::new(&model, &examples[0].image, &vocab).unwrap();
    c.bench_function("greedy decode desk 40", |b| {
        b.iter(|| sample_greedy(&src, 40).unwrap())
    });
    c.bench_function("beam decode desk k3 20", |b| {
        b.iter(|| sample_beam(&src, 3, 20).unwrap())
    });

    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    let cfg = TrainConfig::default();
    group.bench_function("desk epoch over 4 GUIs", |b| {
        b.iter_batched(
            desk_model,
            |mut m| {
                let mut trainer = Trainer::new(&m, &examples, &vocab, &cfg, 0).unwrap();
                trainer.epoch(&mut m, |_, _| {}).unwrap()
            },
            criterion::BatchSize::LargeInput,
        )
    });
    group.finish();
}

criterion_group!(pipeline, bench_front_end, bench_model);
criterion_main!(pipeline);
