use std::collections::BTreeSet;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use sisa_core::nn::{backward, forward, softmax_cross_entropy, Mode, ModelConfig, ModelParams, Purpose, RngKey};
use sisa_core::signal::{apply_emi, build_dataset, generate_all, generate_condition, EmiSpec, FaultCondition};
use sisa_core::sisa::{
    aggregate_probabilities, plan_shards, train_all, unlearn, Checkpoint, MemoryStore, ShardStrategy, TrainConfig,
    UnlearnRequest,
};

fn desk_model() -> ModelConfig {
    ModelConfig {
        lstm1_hidden: 32,
        lstm2_hidden: 16,
        fc_hidden: 32,
        ..ModelConfig::default()
    }
}

fn inputs(cfg: &ModelConfig, batch: usize) -> (Vec<f64>, Vec<usize>) {
    let n = batch * cfg.window_len * cfg.input_dim;
    let x = (0..n).map(|i| (i * 37 % 101) as f64 / 50.0 - 1.0).collect();
    let y = (0..batch).map(|i| i % cfg.num_classes).collect();
    (x, y)
}

fn network(c: &mut Criterion) {
    let cfg = desk_model();
    let params = ModelParams::init(&cfg, RngKey::new(1, Purpose::Init)).unwrap();
    let (x, y) = inputs(&cfg, 64);
    c.bench_function("forward_eval_b64", |b| {
        b.iter(|| forward(&params, &cfg, black_box(&x), 64, Mode::Eval).unwrap())
    });
    c.bench_function("forward_backward_b64", |b| {
        let mut rng = RngKey::new(1, Purpose::Dropout).stream();
        b.iter(|| {
            let (logits, cache) = forward(&params, &cfg, black_box(&x), 64, Mode::Train(&mut rng)).unwrap();
            let (_, dl) = softmax_cross_entropy(&logits, &y, cfg.num_classes).unwrap();
            backward(&params, &cache, &dl).unwrap()
        })
    });
}

fn signals(c: &mut Criterion) {
    let cond = FaultCondition::from_id(24).unwrap();
    c.bench_function("generate_condition", |b| b.iter(|| generate_condition(black_box(cond), 7)));
    let rec = generate_condition(cond, 7);
    let spec = EmiSpec::default_for(vec![0], 3);
    c.bench_function("apply_emi", |b| b.iter(|| apply_emi(black_box(&rec), &spec).unwrap()));
}

fn checkpoints(c: &mut Criterion) {
    let cfg = desk_model();
    let tcfg = TrainConfig {
        model: cfg.clone(),
        ..TrainConfig::default()
    };
    let recs = generate_all(1);
    let split = build_dataset(&recs, cfg.window_len, cfg.window_len, 2).unwrap();
    let plan = plan_shards(&FaultCondition::all(), 2, None, ShardStrategy::SeverityGrouped).unwrap();
    let store = MemoryStore::new();
    let train: Vec<_> = split.train.iter().filter(|s| s.window_start < 1000).cloned().collect();
    let small = TrainConfig {
        epochs_total: 4,
        batch_size: 64,
        ..tcfg
    };
    let out = train_all(&plan, &small, 3, &train, &BTreeSet::new(), &store, 1).unwrap();
    let ck = store_checkpoint(&store);
    let bytes = ck.to_bytes();
    c.bench_function("checkpoint_encode", |b| b.iter(|| black_box(&ck).to_bytes()));
    c.bench_function("checkpoint_decode", |b| b.iter(|| Checkpoint::from_bytes(black_box(&bytes)).unwrap()));

    let mut group = c.benchmark_group("sisa_small");
    group.sample_size(10);
    group.bench_function("train_all_s2", |b| {
        b.iter(|| train_all(&plan, &small, 3, &train, &BTreeSet::new(), &MemoryStore::new(), 1).unwrap())
    });
    let request = UnlearnRequest::new([24]).unwrap();
    group.bench_function("unlearn_slice1_s2", |b| {
        b.iter_batched(
            || store.clone(),
            |s| unlearn(&request, &out.models, &s, &train, &plan, &small, 3, 1).unwrap(),
            BatchSize::LargeInput,
        )
    });
    group.finish();

    let probs: Vec<Vec<f64>> = (0..8).map(|k| (0..6).map(|j| ((k + j) % 6) as f64 / 15.0).collect()).collect();
    c.bench_function("aggregate_8_shards", |b| b.iter(|| aggregate_probabilities(black_box(probs.clone()))));
}

fn store_checkpoint(store: &MemoryStore) -> Checkpoint {
    use sisa_core::sisa::CheckpointStore;
    store.load(0, 4).unwrap().expect("final checkpoint")
}

criterion_group!(benches, network, signals, checkpoints);
criterion_main!(benches);
