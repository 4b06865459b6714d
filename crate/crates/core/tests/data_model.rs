use std::fs;
use std::path::Path;

use gradshift::data::{
    load_idx_images, make_blobs, make_two_moons, rotate, rotated_moons, LabeledSet, Layout, RotationSpec, UnlabeledSet,
};
use gradshift::diagnostics::{probe_config, proxy_a_distance, shift_study, ShiftStudyConfig};
use gradshift::error::Error;
use gradshift::model::{train_source, train_stage, Classifier, LossTerm, TrainConfig, WeightedBatchSpec};
use ndarray::{array, Array2};

fn write_idx(dir: &Path, images: &[Vec<u8>], labels: &[u8], side: u32) -> (std::path::PathBuf, std::path::PathBuf) {
    let mut img = Vec::new();
    img.extend(0x0000_0803u32.to_be_bytes());
    img.extend((images.len() as u32).to_be_bytes());
    img.extend(side.to_be_bytes());
    img.extend(side.to_be_bytes());
    for im in images {
        img.extend(im);
    }
    let mut lab = Vec::new();
    lab.extend(0x0000_0801u32.to_be_bytes());
    lab.extend((labels.len() as u32).to_be_bytes());
    lab.extend(labels);
    let (ip, lp) = (dir.join("images"), dir.join("labels"));
    fs::write(&ip, img).unwrap();
    fs::write(&lp, lab).unwrap();
    (ip, lp)
}

#[test]
fn idx_loader_reads_scales_and_rejects() {
    let dir = tempfile::tempdir().unwrap();
    let images = vec![vec![0u8, 255, 51, 0], vec![255u8; 4], vec![0u8; 4]];
    let (ip, lp) = write_idx(dir.path(), &images, &[3, 9, 0], 2);
    let set = load_idx_images(&ip, &lp).unwrap();
    assert_eq!((set.len(), set.dim(), set.num_classes()), (3, 4, 10));
    assert_eq!(set.labels(), &[3, 9, 0]);
    assert_eq!(set.layout(), Layout::Raster { side: 2 });
    assert_eq!(set.row(0).to_vec(), vec![0.0, 1.0, 0.2, 0.0]);

    let (ip, lp) = write_idx(dir.path(), &images, &[3, 10, 0], 2);
    assert!(matches!(load_idx_images(&ip, &lp), Err(Error::Format(_))));

    let (ip, lp) = write_idx(dir.path(), &images, &[3, 9], 2);
    assert!(matches!(load_idx_images(&ip, &lp), Err(Error::Format(_))));

    let (ip, lp) = write_idx(dir.path(), &images, &[3, 9, 0], 2);
    let bytes = fs::read(&ip).unwrap();
    fs::write(&ip, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(load_idx_images(&ip, &lp), Err(Error::Format(_))));

    let mut bad = bytes.clone();
    bad[3] = 0x01;
    fs::write(&ip, bad).unwrap();
    assert!(matches!(load_idx_images(&ip, &lp), Err(Error::Format(_))));

    assert!(matches!(
        load_idx_images(&dir.path().join("missing"), &lp),
        Err(Error::Io { .. })
    ));
}

#[test]
fn linear_model_separates_moons_on_a_fresh_draw() {
    let train = make_two_moons(200, 0.05, 1).unwrap();
    let fresh = make_two_moons(2000, 0.05, 99).unwrap();
    let cfg = TrainConfig {
        eta0: 0.1,
        iterations: 500,
        ..TrainConfig::default()
    };
    let model = train_source(Classifier::new(&[2, 2], 0).unwrap(), &train, &cfg).unwrap();
    let acc = model.accuracy(fresh.features(), fresh.labels()).unwrap();
    assert!(acc >= 0.8, "linear accuracy {acc}");
}

#[test]
fn larger_rotation_is_further_in_a_distance() {
    let base = make_two_moons(600, 0.1, 3).unwrap();
    let far = rotate(&base, &RotationSpec::new(30.0, 60.0, 4).unwrap()).unwrap();
    let near = rotate(&base, &RotationSpec::new(0.0, 5.0, 4).unwrap()).unwrap();
    let reference = make_two_moons(600, 0.1, 5).unwrap();
    let cfg = probe_config(7);
    let d_far = proxy_a_distance(reference.features(), far.features(), &cfg).unwrap();
    let d_near = proxy_a_distance(reference.features(), near.features(), &cfg).unwrap();
    assert!(d_far > d_near, "far {d_far} near {d_near}");
}

#[test]
fn separable_blobs_reach_full_training_accuracy() {
    let set = make_blobs(&[vec![-3.0, 0.0], vec![3.0, 0.0]], 100, 0.5, 2).unwrap();
    let cfg = TrainConfig {
        iterations: 500,
        ..TrainConfig::default()
    };
    let model = train_source(Classifier::new(&[2, 8, 2], 1).unwrap(), &set, &cfg).unwrap();
    // Every training sample is evaluated, not a batch estimate.
    let correct = (0..set.len())
        .filter(|&i| {
            let p = model.forward(set.row(i)).unwrap().probs;
            (p[1] > p[0]) == (set.labels()[i] == 1)
        })
        .count();
    assert_eq!(correct, set.len());
}

#[test]
fn small_step_decreases_the_batch_loss() {
    let set = make_two_moons(32, 0.1, 8).unwrap();
    let mut model = Classifier::new(&[2, 6, 2], 2).unwrap();
    let term = [LossTerm {
        inputs: set.features(),
        labels: set.labels(),
        weight: 1.0,
    }];
    let (before, grads) = model.loss_and_gradients(&term).unwrap();
    model.sgd_step(&grads, 1e-4, 0.0, 0.0);
    let (after, _) = model.loss_and_gradients(&term).unwrap();
    assert!(after < before, "{after} >= {before}");
}

#[test]
fn stage_without_targets_is_supervised_training() {
    let source = make_two_moons(64, 0.1, 1).unwrap();
    let target = UnlabeledSet::new(Array2::zeros((5, 2))).unwrap();
    let spec = WeightedBatchSpec {
        labeled: (0..source.len()).map(|i| (i, source.labels()[i])).collect(),
        pseudo: Vec::new(),
    };
    let cfg = TrainConfig {
        iterations: 50,
        seed: 4,
        ..TrainConfig::default()
    };
    let init = Classifier::new(&[2, 4, 2], 0).unwrap();
    let staged = train_stage(init.clone(), &source, &target, &spec, &cfg).unwrap();
    let supervised = train_source(init, &source, &cfg).unwrap();
    assert_eq!(staged, supervised);
}

#[test]
fn stage_without_sources_trains_on_pseudo_labels_only() {
    let source = LabeledSet::new(array![[0.0, 0.0], [1.0, 1.0]], vec![0, 1], 2).unwrap();
    let target = make_two_moons(40, 0.0, 2).unwrap();
    let (target_x, y) = target.split_labels();
    let spec = WeightedBatchSpec {
        labeled: Vec::new(),
        pseudo: y.iter().enumerate().map(|(i, &l)| (i, l)).collect(),
    };
    let cfg = TrainConfig {
        iterations: 400,
        eta0: 0.05,
        ..TrainConfig::default()
    };
    let model = train_stage(
        Classifier::new(&[2, 16, 2], 0).unwrap(),
        &source,
        &target_x,
        &spec,
        &cfg,
    )
    .unwrap();
    assert!(model.accuracy(target_x.features(), &y).unwrap() > 0.8);
}

#[test]
fn divergence_is_reported_with_its_iteration() {
    let set = make_two_moons(32, 0.1, 3).unwrap();
    let cfg = TrainConfig {
        eta0: 1e200,
        iterations: 50,
        ..TrainConfig::default()
    };
    match train_source(Classifier::new(&[2, 4, 2], 0).unwrap(), &set, &cfg) {
        Err(Error::TrainingDiverged { iteration, .. }) => assert!(iteration < 50),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn shift_study_single_source_bucket_matches_holdout() {
    let base = make_two_moons(5000, 0.1, 11).unwrap();
    let spec = RotationSpec::new(0.0, 5.0, 12).unwrap();
    let curve = shift_study(&base, &spec, 5.0, 1, &ShiftStudyConfig::default()).unwrap();
    assert_eq!(curve.r, vec![0]);
    assert!(
        (curve.accuracy[0] - curve.source_holdout_accuracy).abs() <= 0.02,
        "{} vs {}",
        curve.accuracy[0],
        curve.source_holdout_accuracy
    );
    assert!(curve.a_distance.iter().all(|a| (0.0..=2.0).contains(a)));
}

#[test]
fn rotated_moons_are_reproducible() {
    let a = rotated_moons(50, 0.1, (10.0, 20.0), 3).unwrap();
    let b = rotated_moons(50, 0.1, (10.0, 20.0), 3).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, rotated_moons(50, 0.1, (10.0, 20.0), 4).unwrap());
}
