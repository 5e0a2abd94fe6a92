mod common;

use std::time::Duration;

use common::{random_corpus, uniform_verifier, CorpusShape};
use lever_core::eval::{
    calibration_report, execution_accuracy, outcome_analysis, EvaluationReport, LabeledTask,
    OutcomeBuckets,
};
use lever_core::execution::{ExecutionOutcome, Payload};
use lever_core::generator::{CandidateSource, ProgramCandidate};
use lever_core::repr::VerificationLabel::{self, Correct, Incorrect};
use lever_core::rerank::{RerankConfig, ScoredCandidate, Strategy};
use proptest::prelude::*;

#[test]
fn accuracy_counts_missing_selections_as_wrong() {
    let mut picks = vec![Some(Correct); 7];
    picks.extend([Some(Incorrect), Some(Incorrect), None]);
    assert_eq!(execution_accuracy(&picks), 0.7);
    assert_eq!(execution_accuracy(&[]), 0.0);
}

fn candidate(i: usize, logprob: f64) -> ProgramCandidate {
    ProgramCandidate {
        program_text: format!("p{i}"),
        cumulative_logprob: logprob,
        token_count: 3,
        duplicate_count: 1,
        source: if i == 0 { CandidateSource::Greedy } else { CandidateSource::Sampled },
    }
}

fn outcome(result: &str) -> ExecutionOutcome {
    if let Some(reason) = result.strip_prefix("ERROR: ") {
        ExecutionOutcome::error(reason, Payload::None, Duration::ZERO)
    } else {
        ExecutionOutcome::success(result.to_string(), Payload::None, Duration::ZERO)
    }
}

/// Task with candidates `(result, label, verifier probability)`; candidate 0
/// is the greedy one.
fn task(id: &str, cands: &[(&str, VerificationLabel, f64)]) -> LabeledTask {
    let config = RerankConfig::default();
    LabeledTask {
        task_id: id.into(),
        scored: cands
            .iter()
            .enumerate()
            .map(|(i, (r, _, p))| ScoredCandidate::new(candidate(i, -1.0 - i as f64), outcome(r), *p, &config))
            .collect(),
        labels: cands.iter().map(|c| c.1).collect(),
    }
}

#[test]
fn oracle_accuracy_is_share_of_solvable_tasks() {
    let mut tasks: Vec<LabeledTask> = (0..7)
        .map(|i| task(&format!("s{i}"), &[("1", Incorrect, 0.5), ("2", Correct, 0.5)]))
        .collect();
    tasks.extend((0..3).map(|i| task(&format!("u{i}"), &[("1", Incorrect, 0.5)])));
    let report = EvaluationReport::evaluate(&tasks, &Strategy::ALL, true, 0, "digest").unwrap();
    assert_eq!(report.oracle_accuracy, 0.7);
    assert_eq!(report.accuracy(Strategy::Oracle), Some(0.7));
    assert_eq!(report.accuracy(Strategy::Greedy), Some(0.0));
    assert_eq!(report.task_count, 10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn no_strategy_beats_the_oracle(seed in any::<u64>(), run_seed in any::<u64>()) {
        let shape = CorpusShape { tasks: 40, ..CorpusShape::default() };
        let tasks = random_corpus(seed, shape, &RerankConfig::default(), uniform_verifier);
        let report = EvaluationReport::evaluate(&tasks, &Strategy::ALL, true, run_seed, "d").unwrap();
        let solvable = tasks.iter().filter(|t| t.labels.contains(&Correct)).count();
        prop_assert_eq!(report.oracle_accuracy, solvable as f64 / 40.0);
        for a in &report.accuracies {
            prop_assert!(a.correct <= solvable);
        }
    }
}

#[test]
fn perfect_verifier_calibration() {
    let tasks = random_corpus(11, CorpusShape::default(), &RerankConfig::default(), |l, _| l.as_f64());
    let curve = calibration_report(&tasks).unwrap();
    let (pos, total) = tasks
        .iter()
        .flat_map(|t| &t.labels)
        .fold((0, 0), |(p, n), l| (p + l.is_correct() as usize, n + 1));
    let base = pos as f64 / total as f64;
    assert_eq!(curve.percentiles, vec![10, 20, 30, 40, 50, 60, 70, 80, 90, 100]);
    // Every percentile below the share of incorrect candidates keeps the
    // whole corpus; every percentile above it keeps only correct ones.
    for (p, precision) in curve.percentiles.iter().zip(&curve.verifier) {
        if (*p as f64) / 100.0 <= 1.0 - base {
            assert!((precision - base).abs() < 1e-12, "p{p}: {precision} vs {base}");
        } else {
            assert_eq!(*precision, 1.0, "p{p}");
        }
    }
}

#[test]
fn random_verifier_calibration_tracks_base_rate() {
    let shape = CorpusShape {
        tasks: 2000,
        ..CorpusShape::default()
    };
    let tasks = random_corpus(12, shape, &RerankConfig::default(), uniform_verifier);
    let (pos, total) = tasks
        .iter()
        .flat_map(|t| &t.labels)
        .fold((0, 0), |(p, n), l| (p + l.is_correct() as usize, n + 1));
    let base = pos as f64 / total as f64;
    let curve = calibration_report(&tasks).unwrap();
    for (p, precision) in curve.percentiles.iter().zip(&curve.verifier).take(9) {
        assert!((precision - base).abs() < 0.05, "p{p}: {precision} vs base {base}");
    }
    let csv = curve.to_csv();
    assert!(csv.starts_with("percentile,verifier,generator,joint\n10,"));
    assert_eq!(csv.lines().count(), 11);
}

#[test]
fn outcome_buckets_follow_the_rules() {
    let tasks = vec![
        // Wins: greedy (index 0) wrong, selection (index 1) right.
        task("err", &[("ERROR: boom", Incorrect, 0.1), ("3", Correct, 0.9)]),
        task("type", &[("Paris", Incorrect, 0.1), ("3", Correct, 0.9)]),
        task("range", &[("5000", Incorrect, 0.1), ("3", Correct, 0.9)]),
        task("other", &[("4", Incorrect, 0.1), ("3", Correct, 0.9)]),
        // Both right: neither a win nor a fail.
        task("tie", &[("3", Correct, 0.9)]),
        // Fails.
        task("none", &[("4", Incorrect, 0.5), ("5", Incorrect, 0.5)]),
        task("alike", &[("3", Correct, 0.1), ("4", Incorrect, 0.9)]),
        task("unlike", &[("3", Correct, 0.1), ("Paris", Incorrect, 0.9)]),
        task("unselected", &[("3", Correct, 0.1)]),
    ];
    let lever = [Some(1), Some(1), Some(1), Some(1), Some(0), Some(0), Some(1), Some(1), None];
    let greedy = [Some(0); 9];
    let buckets = outcome_analysis(&tasks, &lever, &greedy).unwrap();
    assert_eq!(
        buckets,
        OutcomeBuckets {
            greedy_had_error: 1,
            type_mismatch_vs_greedy: 1,
            range_mismatch_vs_greedy: 1,
            win_others: 1,
            no_correct_in_samples: 1,
            same_type_and_range: 1,
            fail_others: 2,
        }
    );
    assert_eq!(buckets.wins(), 4);
    assert_eq!(buckets.fails(), 4);
}

#[test]
fn greedy_absent_win_is_others() {
    let t = task("t", &[("3", Correct, 0.9)]);
    let mut t2 = t.clone();
    t2.scored[0].candidate.source = CandidateSource::Sampled;
    let buckets = outcome_analysis(&[t2], &[Some(0)], &[None]).unwrap();
    assert_eq!(buckets.win_others, 1);
}
