use entclust::data::{gen_blobs, gen_margin_gap, split, Dataset};
use entclust::eval::hungarian_accuracy;
use entclust::losses::{LossConfig, LossKind};
use entclust::model::{OptimizerKind, SoftmaxModel};
use entclust::trainer::{
    restart_seed, train, train_epoch_mode, train_on_targets, train_seeds_only,
    train_weakly_supervised, train_with_restarts, TrainConfig, TrainResult, YUpdateMode,
};
use ndarray::Array2;
use proptest::prelude::*;

fn blobs(seed: u64) -> Dataset {
    gen_blobs(seed, 200, 4, 2, 5.0).unwrap()
}

fn cfg(kind: LossKind, k: usize) -> TrainConfig {
    TrainConfig {
        epochs: 10,
        batch_size: 50,
        lr: 0.1,
        ..TrainConfig::new(LossConfig::new(kind, k))
    }
}

#[test]
fn full_batch_without_shuffle_makes_modes_coincide() {
    let ds = blobs(1);
    let c = TrainConfig {
        batch_size: ds.len(),
        shuffle: false,
        ..cfg(LossKind::Ours, 4)
    };
    let model = SoftmaxModel::linear(4, 2, 3);
    let batch = train(&ds, model.clone(), &c).unwrap();
    let epoch = train_epoch_mode(&ds, model, &c).unwrap();
    assert_eq!(batch.model, epoch.model);
    let text = |r: &TrainResult| r.records.iter().map(|x| x.to_json_line()).collect::<Vec<_>>();
    assert_eq!(text(&batch), text(&epoch));
}

#[test]
fn epoch_mode_differs_with_small_batches() {
    let ds = blobs(2);
    let c = cfg(LossKind::Ours, 4);
    let model = SoftmaxModel::linear(4, 2, 0);
    let batch = train(&ds, model.clone(), &c).unwrap();
    let epoch = train(
        &ds,
        model,
        &TrainConfig {
            y_update_mode: YUpdateMode::PerEpoch,
            ..c
        },
    )
    .unwrap();
    assert_ne!(batch.model, epoch.model);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn identical_config_gives_identical_records(seed in 0u64..1000, kind_index in 0usize..6) {
        let kind = LossKind::ALL[kind_index];
        let ds = blobs(seed);
        let c = TrainConfig { seed, epochs: 3, ..cfg(kind, 4) };
        let a = train(&ds, SoftmaxModel::linear(4, 2, seed), &c).unwrap();
        let b = train(&ds, SoftmaxModel::linear(4, 2, seed), &c).unwrap();
        prop_assert_eq!(&a.model, &b.model);
        let text = |r: &TrainResult| {
            r.records.iter().map(|x| x.to_json_line()).collect::<Vec<_>>()
        };
        prop_assert_eq!(text(&a), text(&b));
    }
}

#[test]
fn zero_seed_ratio_matches_unsupervised_training() {
    let ds = blobs(4);
    let (train_set, test) = split(&ds, 0.25, 4).unwrap();
    let seeded = train_set.clone().with_seed_ratio(0.0, 4).unwrap();
    let c = cfg(LossKind::Ours, 4);
    let model = SoftmaxModel::linear(4, 2, 5);
    let plain = train(&train_set, model.clone(), &c).unwrap();
    let weak = train_weakly_supervised(&seeded, &test, model, &c).unwrap();
    assert_eq!(plain.model, weak.model);
}

#[test]
fn full_seed_ratio_is_supervised() {
    // Separable but unbalanced: the fairness term pulls clustering toward an even split.
    let ds = gen_margin_gap(6, 400, 2.0).unwrap();
    let (train_set, test) = split(&ds, 0.3, 6).unwrap();
    let c = TrainConfig {
        epochs: 30,
        ..cfg(LossKind::Ours, 2)
    };
    let model = SoftmaxModel::linear(2, 2, 6);
    let clustered = train(&train_set, model.clone(), &c).unwrap();
    let cluster_acc = clustered.final_accuracy().unwrap();
    let weak = train_weakly_supervised(
        &train_set.with_seed_ratio(1.0, 6).unwrap(),
        &test,
        model,
        &c,
    )
    .unwrap();
    let supervised = weak.final_accuracy().unwrap();
    assert!(supervised > 0.95, "supervised {supervised}");
    assert!(
        supervised > cluster_acc + 0.05,
        "supervised {supervised} vs clustering {cluster_acc}"
    );
}

#[test]
fn few_seeds_plus_clustering_beats_seeds_alone() {
    let mut ours = 0.0;
    let mut alone = 0.0;
    for seed in 0..3 {
        let ds = gen_blobs(seed, 1000, 10, 2, 4.0).unwrap();
        let (train_set, test) = split(&ds, 0.3, seed).unwrap();
        let train_set = train_set.with_seed_ratio(0.05, seed).unwrap();
        let c = TrainConfig {
            seed,
            epochs: 30,
            ..cfg(LossKind::Ours, 10)
        };
        let model = SoftmaxModel::linear(10, 2, seed);
        ours += train_weakly_supervised(&train_set, &test, model.clone(), &c)
            .unwrap()
            .final_accuracy()
            .unwrap();
        alone += train_seeds_only(&train_set, &test, model, &c)
            .unwrap()
            .final_accuracy()
            .unwrap();
    }
    assert!(ours >= alone, "ours {} vs seeds only {}", ours / 3.0, alone / 3.0);
}

#[test]
fn uniform_targets_leave_reverse_ce_inert() {
    let ds = blobs(7);
    let (train_set, test) = split(&ds, 0.25, 7).unwrap();
    let uniform = Array2::from_elem((train_set.len(), 4), 0.25);
    let model = SoftmaxModel::linear(4, 2, 7);
    let c = cfg(LossKind::Ours, 4);
    let reverse = train_on_targets(&train_set, uniform.view(), &test, model.clone(), &c, true).unwrap();
    // The gradient vanishes up to rounding in the sum of σ.
    let moved = (&reverse.model.weights - &model.weights)
        .iter()
        .chain((&reverse.model.bias - &model.bias).iter())
        .fold(0.0f64, |a, v| a.max(v.abs()));
    assert!(moved < 1e-12, "moved {moved:e}");

    let max_prob = |m: &SoftmaxModel| {
        let p = m.predict_proba(train_set.features.view()).unwrap();
        p.rows()
            .into_iter()
            .map(|r| r.iter().cloned().fold(0.0, f64::max))
            .sum::<f64>()
            / p.nrows() as f64
    };
    let forward = train_on_targets(&train_set, uniform.view(), &test, model.clone(), &c, false).unwrap();
    assert!(max_prob(&forward.model) < max_prob(&model));
    assert!(max_prob(&forward.model) < 0.3);
}

#[test]
fn restarts_keep_the_lowest_final_loss() {
    let ds = blobs(8);
    let c = TrainConfig {
        seed: 11,
        ..cfg(LossKind::MiMm, 4)
    };
    let (best, index) = train_with_restarts(&ds, &c, 4, |s| SoftmaxModel::linear(4, 2, s)).unwrap();
    let losses: Vec<f64> = (0..4)
        .map(|r| {
            let seed = restart_seed(11, r);
            let rc = TrainConfig { seed, ..c.clone() };
            train(&ds, SoftmaxModel::linear(4, 2, seed), &rc)
                .unwrap()
                .records
                .last()
                .unwrap()
                .loss
                .total
        })
        .collect();
    let min = losses.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(losses[index], min);
    assert_eq!(best.records.last().unwrap().loss.total, min);
    assert_eq!(restart_seed(11, 0), 11);
    assert!(train_with_restarts(&ds, &c, 0, |s| SoftmaxModel::linear(4, 2, s)).is_err());
}

#[test]
fn hidden_layer_with_adam_fits_blobs() {
    let ds = blobs(9);
    let c = TrainConfig {
        optimizer: OptimizerKind::Adam,
        lr: 0.01,
        epochs: 30,
        ..cfg(LossKind::Ours, 4)
    };
    let r = train(&ds, SoftmaxModel::with_hidden(4, 2, 16, 9), &c).unwrap();
    let pred = r.model.predict(ds.features.view()).unwrap();
    let acc = hungarian_accuracy(&pred, ds.labels.as_ref().unwrap(), 4).unwrap().0;
    assert!(acc > 0.9, "accuracy {acc}");
}
