use criterion::{criterion_group, criterion_main, Criterion};
use cie_core::trainer::{
    generate_dataset, quantize, train_model, AttributeSpec, QuantSpec, SyntheticDatasetSpec,
    TrainConfig,
};
use cie_core::QuantKind;

fn training(c: &mut Criterion) {
    let data = generate_dataset(&SyntheticDatasetSpec {
        num_examples: 5_000,
        num_features: 8,
        test_fraction: 0.2,
        positive_rate: 0.15,
        attributes: vec![AttributeSpec {
            name: "Minority".into(),
            frequency: 0.1,
            positive_rate: Some(0.5),
        }],
        noise: 1.5,
        seed: 7,
    })
    .unwrap();
    let config = TrainConfig {
        hidden: vec![128, 128],
        steps: 100,
        batch_size: 32,
        learning_rate: 0.05,
        seed: 1,
    };

    let mut g = c.benchmark_group("trainer");
    g.sample_size(10);
    g.bench_function("100_sgd_steps_128x128", |b| {
        b.iter(|| train_model(&data.train, &config, None, 2).unwrap())
    });
    let model = train_model(&data.train, &config, None, 2).unwrap().model;
    let calibration = data.train.head_features(100);
    for kind in [QuantKind::HybridInt8, QuantKind::FixedpointInt8] {
        g.bench_function(format!("quantize_{}", kind.as_str()), |b| {
            b.iter(|| quantize(&model, &QuantSpec::new(kind), calibration).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, training);
criterion_main!(benches);
