mod common;

use std::fs;
use std::path::{Path, PathBuf};

use lever_core::pipeline::{write_synthetic_experiment, Pipeline, PipelineConfig, PipelineError, Stage};
use lever_core::rerank::Strategy;

fn experiment(dir: &Path) -> PathBuf {
    write_synthetic_experiment(dir, 40, 20, 3).unwrap()
}

fn pipeline(config: &Path) -> Pipeline {
    Pipeline::new(PipelineConfig::load(config).unwrap()).unwrap()
}

fn report(dir: &Path) -> String {
    fs::read_to_string(dir.join("work/report.json")).unwrap()
}

#[test]
fn full_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = pipeline(&experiment(dir.path()));
    let r = p.run().unwrap();
    assert_eq!(
        p.log,
        ["sample:train", "sample:eval", "execute:train", "execute:eval", "label:train", "label:eval", "train", "rerank", "eval"]
    );
    for f in ["run.json", "model.json", "train/executed.jsonl", "eval/labels.jsonl", "eval/scored.jsonl", "eval/reranked.jsonl", "report.txt"] {
        assert!(dir.path().join("work").join(f).exists(), "{f}");
    }
    assert_eq!(r.task_count, 20);
    let oracle = r.accuracy(Strategy::Oracle).unwrap();
    assert_eq!(oracle, r.oracle_accuracy);
    for a in &r.accuracies {
        assert!(a.accuracy <= oracle);
    }
    let reports = p.report(true, true).unwrap();
    assert!(reports.calibration.is_some() && reports.outcomes.is_some());
    assert!(dir.path().join("work/calibration.csv").exists());
    assert!(dir.path().join("work/outcomes.txt").exists());
}

#[test]
fn second_run_only_reevaluates() {
    let dir = tempfile::tempdir().unwrap();
    let config = experiment(dir.path());
    pipeline(&config).run().unwrap();
    let first = report(dir.path());
    let mut again = pipeline(&config);
    again.run().unwrap();
    assert_eq!(again.log, ["eval"]);
    assert_eq!(report(dir.path()), first);
}

#[test]
fn resuming_after_partial_run_matches_full_run() {
    let full = tempfile::tempdir().unwrap();
    pipeline(&experiment(full.path())).run().unwrap();

    let partial = tempfile::tempdir().unwrap();
    let config = experiment(partial.path());
    let mut p = pipeline(&config);
    p.run_stage(Stage::Sample).unwrap();
    p.run_stage(Stage::Execute).unwrap();
    let mut resumed = pipeline(&config);
    resumed.run().unwrap();
    assert_eq!(resumed.log, ["label:train", "label:eval", "train", "rerank", "eval"]);
    assert_eq!(report(partial.path()), report(full.path()));
}

#[test]
fn config_change_invalidates_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let path = experiment(dir.path());
    pipeline(&path).run().unwrap();
    let text = fs::read_to_string(&path).unwrap().replace("seed = 3", "seed = 4");
    fs::write(&path, text).unwrap();
    let mut p = pipeline(&path);
    p.run().unwrap();
    assert_eq!(p.log.first().map(String::as_str), Some("sample:train"));
    assert!(report(dir.path()).contains("\"seed\": 4"));
}

#[test]
fn saved_model_skips_training() {
    let dir = tempfile::tempdir().unwrap();
    let path = experiment(dir.path());
    let trained = pipeline(&path).run().unwrap();
    fs::copy(dir.path().join("work/model.json"), dir.path().join("saved.json")).unwrap();

    let text = fs::read_to_string(&path).unwrap()
        .replace("train_tasks = \"train.jsonl\"\n", "")
        .replace("work_dir = \"work\"", "work_dir = \"work2\"")
        + "\n[verifier]\nmodel = \"saved.json\"\n";
    let reuse = dir.path().join("reuse.toml");
    fs::write(&reuse, text).unwrap();
    let mut p = pipeline(&reuse);
    let r = p.run().unwrap();
    assert_eq!(p.log, ["sample:eval", "execute:eval", "label:eval", "rerank", "eval"]);
    assert!(!dir.path().join("work2/train").exists());
    assert_eq!(r.accuracies, trained.accuracies);
    let err = p.run_stage(Stage::Train).unwrap_err();
    assert!(matches!(err, PipelineError::Config(_)));
}

#[test]
fn missing_input_names_stage_and_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = pipeline(&experiment(dir.path()));
    let err = p.run_stage(Stage::Rerank).unwrap_err();
    let expected = dir.path().join("work/eval/executed.jsonl");
    assert_eq!(err.to_string(), format!("rerank stage: missing input {}", expected.display()));

    fs::remove_file(dir.path().join("train.jsonl")).unwrap();
    let err = p.run_stage(Stage::Sample).unwrap_err();
    assert!(err.to_string().starts_with("sample stage: missing input"), "{err}");
    assert!(err.to_string().ends_with("train.jsonl"), "{err}");
}

#[test]
fn same_config_same_report_anywhere() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let pa = pipeline(&experiment(a.path()));
    let pb = pipeline(&experiment(b.path()));
    assert_eq!(pa.digest(), pb.digest());
    let (mut pa, mut pb) = (pa, pb);
    pa.run().unwrap();
    pb.run().unwrap();
    assert_eq!(report(a.path()), report(b.path()));
}

#[test]
fn remote_verifier_replaces_training() {
    let dir = tempfile::tempdir().unwrap();
    let path = experiment(dir.path());
    let responses = vec![(200, "{\"probability\": 0.5}".to_string()); 2000];
    let (url, log) = common::serve(responses, None);
    let text = fs::read_to_string(&path).unwrap() + &format!("\n[verifier]\nremote_url = \"{url}\"\n");
    fs::write(&path, text).unwrap();
    let mut p = pipeline(&path);
    let r = p.run().unwrap();
    assert!(!p.log.iter().any(|s| s == "train"));
    let scored: usize = fs::read_to_string(dir.path().join("work/eval/executed.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["entries"].as_array().unwrap().len())
        .sum();
    assert_eq!(log.lock().unwrap().len(), scored);
    assert!(r.accuracy(Strategy::Lever).is_some());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let err = PipelineConfig::parse("[data]\nkind = \"sql_query\"\neval_tasks = \"e.jsonl\"\nbogus = 1\n").unwrap_err();
    assert!(err.to_string().contains("bogus"), "{err}");
}
