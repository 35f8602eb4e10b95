//! Optimizer, metrics and the training loop on small graphs.

use std::path::Path;

use nodeformer::data::{load_dataset, SplitTag};
use nodeformer::model::{Model, ModelDims};
use nodeformer::rng;
use nodeformer::trainer::{adam_step, evaluate, roc_auc, train, AdamState, Metric, TrainConfig};
use nodeformer::Tensor;

fn toy_config() -> TrainConfig {
    TrainConfig {
        hidden: 8,
        m: 16,
        k: 2,
        epochs: 6,
        ..TrainConfig::default()
    }
}

fn toy() -> nodeformer::data::Graph {
    load_dataset(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/toy")).unwrap()
}

#[test]
fn adam_examples() {
    let mut p = Tensor::from_vec(1, 2, vec![0.5, -0.5]).unwrap();
    let zero = Tensor::zeros(1, 2);
    let mut st = AdamState::new(&[(1, 2)]);
    adam_step(&mut [&mut p], &[&zero], &["p".into()], &mut st, 0.1, 0.0).unwrap();
    assert_eq!(p.data(), &[0.5, -0.5]);
    assert_eq!(st.step, 1);

    let mut w = Tensor::scalar(0.0);
    let mut st = AdamState::new(&[(1, 1)]);
    adam_step(
        &mut [&mut w],
        &[&Tensor::scalar(1.0)],
        &["w".into()],
        &mut st,
        0.1,
        0.0,
    )
    .unwrap();
    assert!((w.item() + 0.1).abs() < 1e-6, "{}", w.item());
}

#[test]
fn auc_examples() {
    assert_eq!(
        roc_auc(&[0.9, 0.8, 0.3, 0.1], &[true, true, false, false]).unwrap(),
        1.0
    );
    assert_eq!(roc_auc(&[0.9, 0.1], &[false, true]).unwrap(), 0.0);
    assert_eq!(
        roc_auc(&[0.4; 6], &[true, false, true, false, true, false]).unwrap(),
        0.5
    );
    let ranks: Vec<f64> = (0..10).map(f64::from).collect();
    let labels: Vec<bool> = (0..10).map(|i| i >= 5).collect();
    assert_eq!(roc_auc(&ranks, &labels).unwrap(), 1.0);

    let mut g = rng::rng(0);
    let scores: Vec<f64> = (0..100_000).map(|_| rng::uniform(&mut g)).collect();
    let labels: Vec<bool> = (0..100_000).map(|i| i % 2 == 0).collect();
    let auc = roc_auc(&scores, &labels).unwrap();
    assert!((auc - 0.5).abs() < 0.01, "{auc}");
}

#[test]
fn zero_epochs_returns_the_initial_model() {
    let g = toy();
    let cfg = TrainConfig {
        epochs: 0,
        ..toy_config()
    };
    let out = train(&g, &cfg).unwrap();
    assert!(out.record.epochs.is_empty());
    let dims = ModelDims {
        input: 2,
        hidden: 8,
        classes: 2,
        layers: 2,
        heads: 1,
    };
    assert_eq!(out.model, Model::init(dims, 16, 0).unwrap());
}

#[test]
fn same_seed_same_trajectory() {
    let g = toy();
    let a = train(&g, &toy_config()).unwrap();
    let b = train(&g, &toy_config()).unwrap();
    assert_eq!(a.record, b.record);
    assert_eq!(a.model, b.model);
}

#[test]
fn lambda_zero_records_no_edge_term() {
    let g = toy();
    let off = train(
        &g,
        &TrainConfig {
            lambda: 0.0,
            ..toy_config()
        },
    )
    .unwrap();
    assert!(off.record.epochs.iter().all(|e| e.loss_edge == 0.0));
    let on = train(&g, &toy_config()).unwrap();
    assert!(on.record.epochs.iter().all(|e| e.loss_edge > 0.0));
}

#[test]
fn mini_batches_train_and_evaluate() {
    let g = toy();
    let cfg = TrainConfig {
        batch_size: 4,
        ..toy_config()
    };
    let out = train(&g, &cfg).unwrap();
    assert_eq!(out.record.epochs.len(), 6);
    let acc = evaluate(&out.model, &g, &cfg, SplitTag::Test, Metric::Accuracy).unwrap();
    assert!((0.0..=1.0).contains(&acc));
}
