use cadtext_core::codec::{parse, serialize};
use cadtext_core::fixtures::{self, RandomLimits};
use cadtext_core::geometry::{render_model, sample_point_cloud, RenderConfig};
use cadtext_core::mask::{enumerate_selections, infill, Level, PreparedModel};
use cadtext_core::metrics::chamfer;
use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_models(n: usize) -> Vec<cadtext_core::CadModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    (0..n).map(|_| fixtures::random_model(&mut rng, &RandomLimits::default())).collect()
}

fn codec(c: &mut Criterion) {
    let models = random_models(100);
    let texts: Vec<_> = models.iter().map(|m| serialize(m).unwrap()).collect();
    c.bench_function("serialize 100 models", |b| {
        b.iter(|| models.iter().map(|m| serialize(black_box(m)).unwrap()).count())
    });
    c.bench_function("parse 100 texts", |b| {
        b.iter(|| texts.iter().map(|t| parse(black_box(t)).unwrap()).count())
    });
}

fn masking(c: &mut Criterion) {
    let models = random_models(20);
    c.bench_function("mask and infill every selection of 20 models", |b| {
        b.iter(|| {
            let mut n = 0;
            for m in &models {
                let prep = PreparedModel::new(m).unwrap();
                for level in Level::HIERARCHY {
                    for sel in enumerate_selections(m, level) {
                        let mt = prep.apply(&sel).unwrap();
                        infill(&mt.text(), &mt.answer()).unwrap();
                        n += 1;
                    }
                }
            }
            n
        })
    });
}

fn geometry(c: &mut Criterion) {
    let m = fixtures::two_body_model();
    let cfg = RenderConfig::default();
    c.bench_function("render two-body model at 64^3", |b| b.iter(|| render_model(black_box(&m), &cfg).unwrap()));
    let grid = render_model(&m, &cfg).unwrap().grid;
    let a = sample_point_cloud(&grid, 2000, 1).unwrap();
    let b_cloud = sample_point_cloud(&grid, 2000, 2).unwrap();
    c.bench_function("chamfer 2000 x 2000", |b| b.iter(|| chamfer(black_box(&a), black_box(&b_cloud)).unwrap()));
}

criterion_group!(benches, codec, masking, geometry);
criterion_main!(benches);
