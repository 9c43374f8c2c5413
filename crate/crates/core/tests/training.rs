use std::collections::HashMap;

use duoreid_core::data::{generate_synthetic, Dataset, Modality, SynthSpec};
use duoreid_core::harness::benchmark;
use duoreid_core::trainer::{train, train_epoch, warm_up, ModelId, ModelState, TrainConfig};
use duoreid_core::Error;

fn small() -> (Dataset, TrainConfig) {
    let (spec, mut config) = benchmark::separable();
    let spec = SynthSpec {
        identities: 8,
        samples_per_modality: 6,
        ..spec
    };
    config.epochs = 3;
    config.warmup_epochs = 1;
    (generate_synthetic(&spec).unwrap(), config)
}

#[test]
fn same_seeds_give_identical_runs() {
    let (data, mut config) = small();
    config.injected_label_noise = 0.2;
    let first = train(&data.unlabeled(), &config).unwrap();
    let second = train(&data.unlabeled(), &config).unwrap();
    assert_eq!(first, second);
    assert_eq!(first.log.epochs.len(), 3);

    config.seed_b += 10;
    let other = train(&data.unlabeled(), &config).unwrap();
    assert_ne!(first.b.encoder, other.b.encoder);
}

#[test]
fn zero_epochs_returns_warmed_models() {
    let (data, mut config) = small();
    config.epochs = 0;
    let out = train(&data.unlabeled(), &config).unwrap();
    assert!(out.log.epochs.is_empty());
    let view = data.unlabeled();
    let mut a = ModelState::init(ModelId::A, data.dim(), &config);
    warm_up(&mut a, &view, &config, config.warmup_epochs, 0).unwrap();
    assert_eq!(out.a, a);
}

#[test]
fn single_model_leaves_b_untouched() {
    let (data, mut config) = small();
    config.ablation.single_model = true;
    let out = train(&data.unlabeled(), &config).unwrap();
    assert_eq!(out.b, ModelState::init(ModelId::B, data.dim(), &config));
    assert_ne!(out.a, ModelState::init(ModelId::A, data.dim(), &config));
    assert!(out
        .log
        .epochs
        .iter()
        .all(|e| e.models.len() == 1 && e.models[0].model == ModelId::A));
    assert!(out
        .log
        .epochs
        .iter()
        .all(|e| e.models[0].cross_model.is_none()));
}

#[test]
fn warm_up_lowers_loss_and_zero_rate_freezes() {
    let (data, config) = small();
    let view = data.unlabeled();
    let mut a = ModelState::init(ModelId::A, data.dim(), &config);
    let log = warm_up(&mut a, &view, &config, 1, 0).unwrap();
    assert!(
        log[0].last_batch_loss < log[0].first_batch_loss,
        "{:?}",
        log[0]
    );

    let frozen = TrainConfig {
        lr: 0.0,
        ..config.clone()
    };
    let mut b = ModelState::init(ModelId::B, data.dim(), &frozen);
    let before = b.encoder.clone();
    warm_up(&mut b, &view, &frozen, 2, 0).unwrap();
    assert_eq!(b.encoder, before);
}

#[test]
fn failed_epoch_rolls_back_both_models() {
    let (data, config) = small();
    let view = data.unlabeled();
    let mut a = ModelState::init(ModelId::A, data.dim(), &config);
    let mut b = ModelState::init(ModelId::B, data.dim(), &config);
    warm_up(&mut a, &view, &config, 1, 0).unwrap();
    warm_up(&mut b, &view, &config, 1, 0).unwrap();
    train_epoch(&mut a, &mut b, &view, &config, 0).unwrap();
    let (a0, b0) = (a.clone(), b.clone());

    // No sample has enough neighbors, so clustering yields nothing.
    let mut broken = config.clone();
    broken.dbscan.min_pts = data.len() + 1;
    let err = train_epoch(&mut a, &mut b, &view, &broken, 1).unwrap_err();
    assert!(matches!(err, Error::EmptyClusters(_)), "{err}");
    assert_eq!((a, b), (a0, b0));
}

#[test]
fn clean_separable_labels_follow_identities() {
    let (spec, config) = benchmark::instance(benchmark::separable, 0);
    let data = generate_synthetic(&spec).unwrap();
    let out = train(&data.unlabeled(), &config).unwrap();
    let last = out.log.epochs.last().unwrap();
    for model in &last.models {
        for m in Modality::ALL {
            let ids = data.identities(m);
            let mut seen: HashMap<usize, usize> = HashMap::new();
            let mut back: HashMap<usize, usize> = HashMap::new();
            for (label, id) in model.consumed.get(m).iter().zip(&ids) {
                let l = label.intra.expect("no noise points on separable data");
                assert_eq!(*seen.entry(*id).or_insert(l), l, "identity {id} split");
                assert_eq!(
                    *back.entry(l).or_insert(*id),
                    *id,
                    "cluster {l} mixes identities"
                );
            }
            assert_eq!(seen.len(), spec.identities);
        }
    }
}

#[test]
fn dual_models_train_on_each_others_labels() {
    let (data, config) = small();
    let out = train(&data.unlabeled(), &config).unwrap();
    for e in &out.log.epochs {
        let [a, b] = [&e.models[0], &e.models[1]];
        for (consumer, producer) in [(a, b), (b, a)] {
            let mapping = consumer
                .cross_model
                .as_ref()
                .expect("cross-model matching in dual mode");
            for m in Modality::ALL {
                for (label, own) in consumer
                    .consumed
                    .get(m)
                    .iter()
                    .zip(producer.own_labels.get(m))
                {
                    assert_eq!(label.intra, own.and_then(|l| mapping.get(m).forward(l)));
                }
            }
        }
    }
}
