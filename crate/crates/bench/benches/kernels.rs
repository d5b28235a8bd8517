use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use styleaug::adain::{adain, adain_backward, StyleArch, StyleTransferModel, DEFAULT_EPS, DEFAULT_LAMBDA};
use styleaug::augment::{augment_batch_encoded, AugmentationPolicy, EncodedImages};
use styleaug::data::{assemble_batch, generate_synthetic_domains, SyntheticSpec};
use styleaug::harness::{Classifier, ClassifierArch};
use styleaug::Tensor;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(0.0f32..1.0))
}

fn style_model() -> StyleTransferModel {
    let m = StyleTransferModel::new(&StyleArch::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    StyleTransferModel::from_networks(m.encoder, m.decoder, DEFAULT_LAMBDA, DEFAULT_EPS, true).unwrap()
}

fn bench_adain(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let fc = random(&[24, 64, 16, 16], &mut rng);
    let fs = random(&[24, 64, 16, 16], &mut rng);
    let d = random(&[24, 64, 16, 16], &mut rng);
    c.bench_function("adain forward 24x64x16x16", |b| b.iter(|| adain(&fc, &fs, DEFAULT_EPS).unwrap()));
    c.bench_function("adain backward 24x64x16x16", |b| {
        b.iter(|| adain_backward(&fc, &fs, DEFAULT_EPS, &d).unwrap())
    });
}

fn bench_style(c: &mut Criterion) {
    let model = style_model();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&[24, 3, 32, 32], &mut rng);
    let y = random(&[24, 3, 32, 32], &mut rng);
    c.bench_function("stylize batch of 24 at 32px", |b| b.iter(|| model.stylize(&x, &y, 1.0).unwrap()));

    let spec = SyntheticSpec {
        images_per_class: 4,
        ..Default::default()
    };
    let ds = generate_synthetic_domains(&spec, 0).unwrap();
    let ids: Vec<usize> = (0..24).map(|i| i * 4).collect();
    let batch = assemble_batch(&ds, &ids).unwrap();
    let enc = EncodedImages::new(&model, &ds, &ids, 64).unwrap();
    let policy = AugmentationPolicy::new(0.75, 1.0, 0).unwrap();
    c.bench_function("augment batch of 24 with cached features", |b| {
        b.iter_batched(
            || ChaCha8Rng::seed_from_u64(3),
            |mut r| augment_batch_encoded(&batch, &model, &enc, &policy, &mut r).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn bench_classifier(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let clf = Classifier::new(&ClassifierArch::default(), &[3, 32, 32], 7, &mut rng).unwrap();
    let x = random(&[24, 3, 32, 32], &mut rng);
    c.bench_function("classifier forward+backward, batch 24", |b| {
        b.iter(|| {
            let f = clf.trunk.forward(&x, true).unwrap();
            let o = clf.head.forward(&f.output, true).unwrap();
            let up = Tensor::full(o.output.shape(), 0.1);
            let gh = clf.head.backward(&o, &up).unwrap();
            clf.trunk.backward(&f, gh.input.as_ref().unwrap()).unwrap()
        })
    });
}

criterion_group!(benches, bench_adain, bench_style, bench_classifier);
criterion_main!(benches);
