use std::path::Path;

use gradshift::data::{make_ssda_split, ShiftTask};
use gradshift::pipeline::{run_da, run_da_with, run_ssda, Mode, RunConfig, RunOptions, SelectionMode};
use serde_json::Value;

fn validator() -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schema/report.schema.json");
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&schema).unwrap()
}

fn check(v: &jsonschema::Validator, doc: &Value) {
    let errors: Vec<String> = v
        .iter_errors(doc)
        .map(|e| format!("{} at {}", e, e.instance_path()))
        .collect();
    assert!(errors.is_empty(), "{errors:#?}");
}

fn quick(stages: usize) -> RunConfig {
    let mut cfg = RunConfig {
        stages,
        track_consecutive_a_distance: true,
        ..RunConfig::default()
    };
    cfg.source_train.iterations = 100;
    cfg.adapt_train.iterations = 100;
    cfg
}

#[test]
fn emitted_reports_validate() {
    let v = validator();
    let task = ShiftTask::rotating_moons(100, 100, 0.1, (0.0, 30.0), (60.0, 90.0), 1).unwrap();
    let (target, y) = task.target.clone().split_labels();

    let da = run_da(&task.source, &target, &quick(3), Some(&y)).unwrap();
    check(&v, &serde_json::to_value(da.report()).unwrap());

    let random = RunConfig {
        selection_source: SelectionMode::Random,
        selection_target: SelectionMode::All,
        track_consecutive_a_distance: false,
        ..quick(2)
    };
    check(
        &v,
        &serde_json::to_value(run_da(&task.source, &target, &random, None).unwrap().report()).unwrap(),
    );

    let split = make_ssda_split(&task.target, 2, 0).unwrap();
    let cfg = RunConfig {
        mode: Mode::Ssda { labels_per_class: 2 },
        ..quick(2)
    };
    let ssda = run_ssda(&task.source, &split, &cfg, Some(&split.unlabeled_eval_labels)).unwrap();
    check(&v, &serde_json::to_value(ssda.report()).unwrap());
}

#[test]
fn on_disk_reports_validate_including_partial_ones() {
    let v = validator();
    let task = ShiftTask::rotating_moons(100, 100, 0.1, (0.0, 30.0), (60.0, 90.0), 2).unwrap();
    let (target, y) = task.target.split_labels();
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        checkpoint_dir: Some(dir.path().to_path_buf()),
        ..quick(3)
    };
    run_da_with(&task.source, &target, &cfg, Some(&y), &RunOptions::default()).unwrap();
    let read = |p: &Path| -> Value { serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap() };
    let report = read(&dir.path().join("report.json"));
    check(&v, &report);

    let mut partial = report.clone();
    partial["stages"].as_array_mut().unwrap().truncate(1);
    partial["completed_stages"] = 1.into();
    check(&v, &partial);
}

#[test]
fn schema_rejects_malformed_reports() {
    let v = validator();
    let task = ShiftTask::rotating_moons(60, 60, 0.1, (0.0, 30.0), (60.0, 90.0), 3).unwrap();
    let (target, y) = task.target.split_labels();
    let good = serde_json::to_value(run_da(&task.source, &target, &quick(2), Some(&y)).unwrap().report()).unwrap();

    let mut extra = good.clone();
    extra["surprise"] = 1.into();
    assert!(!v.is_valid(&extra));

    let mut bad_acc = good.clone();
    bad_acc["final_accuracy"] = 1.5.into();
    assert!(!v.is_valid(&bad_acc));

    let mut bad_mode = good.clone();
    bad_mode["config"]["selection_target"] = "best".into();
    assert!(!v.is_valid(&bad_mode));

    let mut missing = good;
    missing.as_object_mut().unwrap().remove("stages");
    assert!(!v.is_valid(&missing));
}
