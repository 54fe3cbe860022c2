use pvcnn_core::model::build_model;
use pvcnn_core::optim::OptimizerConfig;
use pvcnn_core::train::{evaluate, synthetic_set, train, ImageSet, TrainConfig};
use pvcnn_core::{ArchId, Tensor};

#[test]
fn proposed_overfits_sixteen_images() {
    let set = synthetic_set(16, 2, 32, 4).unwrap();
    let mut model = build_model(ArchId::Proposed3Conv, 2, [3, 32, 32], 1).unwrap();
    let config = TrainConfig {
        epochs: 50,
        batch_size: 8,
        augment: false,
        seed: 3,
        ..TrainConfig::default()
    };
    let mut reached = None;
    train(&mut model, &set, &set, &config, |r| {
        if reached.is_none() && r.test_accuracy == 1.0 {
            reached = Some(r.epoch);
        }
    })
    .unwrap();
    assert!(reached.is_some(), "never reached 100% train accuracy");
    assert_eq!(evaluate(&model, &set, 16).unwrap().report.overall_accuracy, 1.0);
}

#[test]
fn solid_dark_versus_bright() {
    let images = (0..16).map(|i| Tensor::full(&[3, 16, 16], if i % 2 == 0 { 0.1 } else { 0.9 })).collect();
    let set = ImageSet::new(images, (0..16).map(|i| i % 2).collect(), 2).unwrap();
    let mut model = build_model(ArchId::Proposed3Conv, 2, [3, 16, 16], 6).unwrap();
    let config = TrainConfig {
        epochs: 50,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let log = train(&mut model, &set, &set, &config, |_| {}).unwrap();
    let (first, last) = (log.records()[0], *log.last().unwrap());
    assert!(last.train_loss < first.train_loss);
    assert_eq!(last.train_accuracy, 1.0);
    assert_eq!(last.test_accuracy, 1.0);
}

#[test]
fn identical_seeds_give_identical_logs() {
    let set = synthetic_set(12, 4, 16, 8).unwrap();
    let run = |seed| {
        let mut model = build_model(ArchId::Ablated2Conv, 4, [3, 16, 16], 2).unwrap();
        let config = TrainConfig {
            epochs: 3,
            batch_size: 5,
            seed,
            optimizer: OptimizerConfig::sgd_momentum(),
            ..TrainConfig::default()
        };
        let log = train(&mut model, &set, &set, &config, |_| {}).unwrap();
        (log, model)
    };
    let (a, ma) = run(5);
    let (b, mb) = run(5);
    let (c, _) = run(6);
    assert_eq!(a, b);
    assert_eq!(ma, mb);
    assert_ne!(a, c);
}

#[test]
fn synthetic_set_is_balanced() {
    let set = synthetic_set(16, 4, 8, 0).unwrap();
    for c in 0..4 {
        assert_eq!(set.labels().iter().filter(|&&l| l == c).count(), 4);
    }
}
