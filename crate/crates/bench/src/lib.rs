//! Benchmarks for the per-message and per-training hot paths, sized like
//! the pilot: an 8-category corpus, 740 labels, 800 features, 100 trees.

use std::hint::black_box;

use criterion::{BenchmarkId, Criterion, Throughput};
use smstriage_core::harness::{generate, SyntheticSpec};
use smstriage_core::learn::{
    auc_one_vs_rest, train_forest, train_model, ClassifierSchema, ForestParams, LabeledText,
};
use smstriage_core::text::{build_vocabulary, DEFAULT_FEATURE_CAP};

const LABELS: usize = 740;

fn labeled(n: usize, seed: u64) -> Vec<(String, String)> {
    generate(&SyntheticSpec::health(n, seed))
        .expect("valid preset")
        .into_iter()
        .map(|l| (l.text, l.true_category.unwrap_or_default()))
        .collect()
}

fn schema() -> ClassifierSchema {
    ClassifierSchema {
        id: "clf-0001".into(),
        collection_id: "col-0001".into(),
        name: "health".into(),
        categories: ClassifierSchema::health_categories(),
        k: DEFAULT_FEATURE_CAP,
        retrain_every: 50,
        active_threshold: 0.60,
        holdout_fraction: 0.20,
        num_trees: 100,
        seed: 0,
        selection: Default::default(),
    }
}

pub fn benchmarks(c: &mut Criterion) {
    let data = labeled(LABELS, 1);
    let schema = schema();
    let texts: Vec<LabeledText> = data
        .iter()
        .enumerate()
        .map(|(i, (text, category))| LabeledText {
            message_id: format!("msg-{i:08}"),
            text: text.clone(),
            category: category.clone(),
        })
        .collect();

    c.bench_function("build_vocabulary/740", |b| {
        b.iter(|| build_vocabulary(black_box(&data), DEFAULT_FEATURE_CAP, 1).unwrap())
    });

    let vocab = build_vocabulary(&data, DEFAULT_FEATURE_CAP, 1).unwrap();
    let class_of = |c: &str| schema.category_index(c).unwrap();
    let samples: Vec<_> = data
        .iter()
        .map(|(t, c)| (vocab.vectorize(t), class_of(c)))
        .collect();
    let mut group = c.benchmark_group("train_forest");
    group.sample_size(10);
    for trees in [10, 100] {
        let params = ForestParams {
            num_trees: trees,
            seed: 0,
        };
        group.bench_with_input(BenchmarkId::from_parameter(trees), &params, |b, p| {
            b.iter(|| {
                train_forest(black_box(&samples), schema.categories.len(), vocab.len(), p).unwrap()
            })
        });
    }
    group.finish();

    let mut group = c.benchmark_group("train_model");
    group.sample_size(10);
    group.bench_function("740", |b| {
        b.iter(|| train_model(&schema, black_box(&texts), 1, Default::default()).unwrap())
    });
    group.finish();

    let model = train_model(&schema, &texts, 1, Default::default()).unwrap();
    let stream = labeled(1000, 2);
    let mut group = c.benchmark_group("classify");
    group.throughput(Throughput::Elements(stream.len() as u64));
    group.bench_function("vectorize_and_predict/1000", |b| {
        b.iter(|| {
            for (text, _) in &stream {
                black_box(model.classify_text(text));
            }
        })
    });
    group.finish();

    let scores: Vec<(f64, bool)> = (0..2000u32)
        .map(|i| (f64::from(i % 97) / 97.0, i % 3 == 0))
        .collect();
    c.bench_function("auc_one_vs_rest/2000", |b| {
        b.iter(|| auc_one_vs_rest(black_box(&scores)).unwrap())
    });
}
