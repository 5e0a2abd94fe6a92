//! Corpus-level accuracy, calibration and outcome reports.

mod calibration;
mod outcomes;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::repr::VerificationLabel;
use crate::rerank::{choose, task_seed, ScoredCandidate, Strategy};

pub use calibration::{calibration_report, percentile_threshold, CalibrationCurve, Scorer};
pub use outcomes::{fail_reason, outcome_analysis, win_reason, FailReason, OutcomeBuckets, WinReason};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("strategy {strategy} accuracy {accuracy} exceeds oracle accuracy {oracle}")]
    OracleBound {
        strategy: Strategy,
        accuracy: f64,
        oracle: f64,
    },
    #[error("task `{task_id}`: {scored} scored candidates but {labels} labels")]
    LabelCount {
        task_id: String,
        scored: usize,
        labels: usize,
    },
    #[error("no scored candidates")]
    Empty,
}

/// One task's scored candidates with their gold labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledTask {
    pub task_id: String,
    pub scored: Vec<ScoredCandidate>,
    pub labels: Vec<VerificationLabel>,
}

impl LabeledTask {
    pub fn check(&self) -> Result<(), EvalError> {
        if self.scored.len() != self.labels.len() {
            return Err(EvalError::LabelCount {
                task_id: self.task_id.clone(),
                scored: self.scored.len(),
                labels: self.labels.len(),
            });
        }
        Ok(())
    }

    pub fn has_correct(&self) -> bool {
        self.labels.iter().any(|l| l.is_correct())
    }
}

/// Fraction of tasks whose selection is labeled correct. A missing
/// selection counts as wrong.
pub fn execution_accuracy(selected: &[Option<VerificationLabel>]) -> f64 {
    if selected.is_empty() {
        return 0.0;
    }
    let correct = selected
        .iter()
        .filter(|l| matches!(l, Some(VerificationLabel::Correct)))
        .count();
    correct as f64 / selected.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSelection {
    pub task_id: String,
    pub strategy: Strategy,
    pub selected_index: Option<usize>,
    pub selected_program: Option<String>,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyAccuracy {
    pub strategy: Strategy,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub config_digest: String,
    pub seed: u64,
    pub aggregate: bool,
    pub task_count: usize,
    pub oracle_accuracy: f64,
    pub accuracies: Vec<StrategyAccuracy>,
    pub selections: Vec<TaskSelection>,
}

/// Selections of one strategy on one task.
pub fn select_for_task(
    task: &LabeledTask,
    strategy: Strategy,
    aggregate: bool,
    seed: u64,
) -> TaskSelection {
    let (index, _) = choose(
        strategy,
        &task.scored,
        &task.labels,
        aggregate,
        task_seed(seed, &task.task_id),
    );
    TaskSelection {
        task_id: task.task_id.clone(),
        strategy,
        selected_index: index,
        selected_program: index.map(|i| task.scored[i].candidate.program_text.clone()),
        correct: index.is_some_and(|i| task.labels[i].is_correct()),
    }
}

impl EvaluationReport {
    /// Runs every strategy over the corpus. Fails if any strategy beats the
    /// oracle, which would mean the labels or selections are inconsistent.
    pub fn evaluate(
        tasks: &[LabeledTask],
        strategies: &[Strategy],
        aggregate: bool,
        seed: u64,
        config_digest: &str,
    ) -> Result<Self, EvalError> {
        for t in tasks {
            t.check()?;
        }
        let oracle_correct = tasks.iter().filter(|t| t.has_correct()).count();
        let oracle_accuracy = ratio(oracle_correct, tasks.len());
        let mut accuracies = Vec::with_capacity(strategies.len());
        let mut selections = Vec::new();
        for &strategy in strategies {
            let picks: Vec<TaskSelection> = tasks
                .iter()
                .map(|t| select_for_task(t, strategy, aggregate, seed))
                .collect();
            let correct = picks.iter().filter(|p| p.correct).count();
            let accuracy = ratio(correct, tasks.len());
            if correct > oracle_correct {
                return Err(EvalError::OracleBound {
                    strategy,
                    accuracy,
                    oracle: oracle_accuracy,
                });
            }
            accuracies.push(StrategyAccuracy {
                strategy,
                correct,
                total: tasks.len(),
                accuracy,
            });
            selections.extend(picks);
        }
        Ok(EvaluationReport {
            config_digest: config_digest.to_string(),
            seed,
            aggregate,
            task_count: tasks.len(),
            oracle_accuracy,
            accuracies,
            selections,
        })
    }

    pub fn accuracy(&self, strategy: Strategy) -> Option<f64> {
        self.accuracies
            .iter()
            .find(|a| a.strategy == strategy)
            .map(|a| a.accuracy)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize") + "\n"
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        writeln!(out, "tasks: {}  seed: {}  aggregate: {}", self.task_count, self.seed, self.aggregate).unwrap();
        writeln!(out, "config: {}", self.config_digest).unwrap();
        writeln!(out, "{:<12} {:>8} {:>8} {:>9}", "strategy", "correct", "total", "accuracy").unwrap();
        for a in &self.accuracies {
            writeln!(
                out,
                "{:<12} {:>8} {:>8} {:>8.2}%",
                a.strategy.as_str(),
                a.correct,
                a.total,
                100.0 * a.accuracy
            )
            .unwrap();
        }
        writeln!(out, "{:<12} {:>8} {:>8} {:>8.2}%", "(bound)", "", self.task_count, 100.0 * self.oracle_accuracy).unwrap();
        out
    }
}

fn ratio(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_counts_labels() {
        let c = Some(VerificationLabel::Correct);
        let w = Some(VerificationLabel::Incorrect);
        assert_eq!(execution_accuracy(&[c, c]), 1.0);
        assert_eq!(execution_accuracy(&[w, None]), 0.0);
        let seven: Vec<_> = (0..10).map(|i| if i < 7 { c } else { w }).collect();
        assert!((execution_accuracy(&seven) - 0.7).abs() < 1e-15);
    }
}
