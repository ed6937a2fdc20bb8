mod common;

use texdistill::anomaly::infer_samples;
use texdistill::distill::{sidecar_path, train, Checkpoint, Teachers};
use texdistill::{FusionRule, Method};

#[test]
fn two_epoch_smoke_run_reduces_loss() {
    let data = common::tiny_dataset(8);
    let config = common::tiny_config(Method::Reduced, 2);
    let teachers = Teachers::load(&config).unwrap();
    let out = train(&config, &data.train_good, &teachers).unwrap();
    assert_eq!(out.history.len(), 2);
    assert!(
        out.history[1].train_loss < out.history[0].train_loss,
        "{:?}",
        out.history
    );
    assert_eq!(out.train_ids.len() + out.val_ids.len(), 8);
}

#[test]
fn checkpoint_round_trip_reproduces_validation_loss() {
    let dir = tempfile::tempdir().unwrap();
    let data = common::tiny_dataset(10);
    let mut config = common::tiny_config(Method::Reduced, 1);
    config.checkpoint_dir = Some(dir.path().to_path_buf());
    let teachers = Teachers::load(&config).unwrap();
    let out = train(&config, &data.train_good, &teachers).unwrap();
    let path = out.checkpoint_path.unwrap();
    assert!(sidecar_path(&path).is_file());
    let (recorded, recomputed) = common::recomputed_validation_loss(&path, &data.train_good);
    assert!(
        common::relative(recorded, recomputed) <= 1e-6,
        "{recorded} vs {recomputed}"
    );

    let reloaded = Checkpoint::load(&path).unwrap();
    assert_eq!(reloaded.config, config);
    assert_eq!(reloaded.resnet_student, out.checkpoint.resnet_student);
}

#[test]
fn mixed_checkpoint_round_trip_and_inference() {
    let dir = tempfile::tempdir().unwrap();
    let data = common::tiny_dataset(10);
    let mut config = common::tiny_config(Method::Mixed, 1);
    config.checkpoint_dir = Some(dir.path().to_path_buf());
    let teachers = Teachers::load(&config).unwrap();
    let out = train(&config, &data.train_good, &teachers).unwrap();
    let path = out.checkpoint_path.unwrap();
    let (recorded, recomputed) = common::recomputed_validation_loss(&path, &data.train_good);
    assert!(
        common::relative(recorded, recomputed) <= 1e-6,
        "{recorded} vs {recomputed}"
    );

    let model = Checkpoint::load(&path)
        .unwrap()
        .into_model(&teachers, FusionRule::Extent)
        .unwrap();
    let results = infer_samples(&model, &data.test, 4).unwrap();
    assert_eq!(results.len(), data.test.len());
    for r in &results {
        assert_eq!(r.map.dim(), (64, 64));
        assert!(r.effnet_map.is_some());
        assert!(r.score.is_finite() && r.score >= 0.0);
    }
}

#[test]
fn checkpoint_rejects_a_different_teacher() {
    let dir = tempfile::tempdir().unwrap();
    let data = common::tiny_dataset(6);
    let mut config = common::tiny_config(Method::Reduced, 1);
    config.checkpoint_dir = Some(dir.path().to_path_buf());
    let teachers = Teachers::load(&config).unwrap();
    let path = train(&config, &data.train_good, &teachers)
        .unwrap()
        .checkpoint_path
        .unwrap();
    let mut other = config.clone();
    other.resnet_weights = "seeded:5".into();
    let wrong = Teachers::load(&other).unwrap();
    assert!(Checkpoint::load(&path)
        .unwrap()
        .into_model(&wrong, FusionRule::Extent)
        .is_err());
}

#[test]
fn seeded_runs_repeat_their_first_steps() {
    let data = common::tiny_dataset(16);
    let config = common::tiny_config(Method::Reduced, 1);
    let teachers = Teachers::load(&config).unwrap();
    let a = train(&config, &data.train_good, &teachers).unwrap();
    let b = train(&config, &data.train_good, &teachers).unwrap();
    assert!(a.step_losses.len() >= 3);
    for (x, y) in a.step_losses.iter().zip(&b.step_losses).take(3) {
        assert!(common::relative(*x, *y) <= 1e-6, "{x} vs {y}");
    }
}

#[test]
fn teachers_are_not_modified_by_training() {
    let data = common::tiny_dataset(8);
    let config = common::tiny_config(Method::Mixed, 1);
    let teachers = Teachers::load(&config).unwrap();
    let before = teachers.fingerprints();
    train(&config, &data.train_good, &teachers).unwrap();
    assert_eq!(teachers.current_fingerprints(), before);
}

#[test]
fn invalid_configs_name_the_field() {
    let data = common::tiny_dataset(4);
    let mut config = common::tiny_config(Method::Reduced, 1);
    config.split_ratio = 1.5;
    let teachers = Teachers::load(&common::tiny_config(Method::Reduced, 1)).unwrap();
    let err = train(&config, &data.train_good, &teachers).unwrap_err();
    assert!(err.to_string().contains("split_ratio"), "{err}");
}
