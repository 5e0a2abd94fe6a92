use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{EvalError, LabeledTask};
use crate::repr::{MagnitudeBucket, ValueType};

/// Why the reranker was right where greedy decoding was wrong.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WinReason {
    GreedyHadError,
    TypeMismatchVsGreedy,
    RangeMismatchVsGreedy,
    Others,
}

/// Why the reranker was wrong.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailReason {
    NoCorrectInSamples,
    SameTypeAndRange,
    Others,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeBuckets {
    pub greedy_had_error: usize,
    pub type_mismatch_vs_greedy: usize,
    pub range_mismatch_vs_greedy: usize,
    pub win_others: usize,
    pub no_correct_in_samples: usize,
    pub same_type_and_range: usize,
    pub fail_others: usize,
}

impl OutcomeBuckets {
    pub fn wins(&self) -> usize {
        self.greedy_had_error + self.type_mismatch_vs_greedy + self.range_mismatch_vs_greedy + self.win_others
    }

    pub fn fails(&self) -> usize {
        self.no_correct_in_samples + self.same_type_and_range + self.fail_others
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let rows = [
            ("win", "greedy_had_error", self.greedy_had_error),
            ("win", "type_mismatch_vs_greedy", self.type_mismatch_vs_greedy),
            ("win", "range_mismatch_vs_greedy", self.range_mismatch_vs_greedy),
            ("win", "others", self.win_others),
            ("fail", "no_correct_in_samples", self.no_correct_in_samples),
            ("fail", "same_type_and_range", self.same_type_and_range),
            ("fail", "others", self.fail_others),
        ];
        for (side, name, n) in rows {
            writeln!(out, "{side:<5} {name:<26} {n:>6}").unwrap();
        }
        out
    }
}

/// Bucket of a win, comparing greedy's (wrong) outcome to the selection.
/// A missing greedy candidate counts as `Others`.
pub fn win_reason(task: &LabeledTask, selected: usize, greedy: Option<usize>) -> WinReason {
    let Some(g) = greedy else {
        return WinReason::Others;
    };
    let greedy_out = &task.scored[g].outcome;
    if !greedy_out.status.is_success() {
        return WinReason::GreedyHadError;
    }
    let ours = &task.scored[selected].outcome.canonical_repr;
    let theirs = &greedy_out.canonical_repr;
    if ValueType::of(ours) != ValueType::of(theirs) {
        WinReason::TypeMismatchVsGreedy
    } else if MagnitudeBucket::of(ours) != MagnitudeBucket::of(theirs) {
        WinReason::RangeMismatchVsGreedy
    } else {
        WinReason::Others
    }
}

/// Bucket of a failure given the wrongly selected candidate.
pub fn fail_reason(task: &LabeledTask, selected: Option<usize>) -> FailReason {
    if !task.has_correct() {
        return FailReason::NoCorrectInSamples;
    }
    let Some(s) = selected else {
        return FailReason::Others;
    };
    let repr = &task.scored[s].outcome.canonical_repr;
    let (ty, mag) = (ValueType::of(repr), MagnitudeBucket::of(repr));
    let lookalike = task.scored.iter().zip(&task.labels).any(|(c, l)| {
        let r = &c.outcome.canonical_repr;
        l.is_correct() && ValueType::of(r) == ty && MagnitudeBucket::of(r) == mag
    });
    if lookalike {
        FailReason::SameTypeAndRange
    } else {
        FailReason::Others
    }
}

/// Buckets every task where the reranker beat greedy decoding (wins) and
/// every task where the reranker was wrong (fails). `lever` and `greedy`
/// hold one selection per task.
pub fn outcome_analysis(
    tasks: &[LabeledTask],
    lever: &[Option<usize>],
    greedy: &[Option<usize>],
) -> Result<OutcomeBuckets, EvalError> {
    let mut b = OutcomeBuckets::default();
    for (i, task) in tasks.iter().enumerate() {
        task.check()?;
        let correct = |sel: Option<usize>| sel.is_some_and(|s| task.labels[s].is_correct());
        let (ours, theirs) = (lever[i], greedy[i]);
        if correct(ours) {
            if !correct(theirs) {
                match win_reason(task, ours.unwrap(), theirs) {
                    WinReason::GreedyHadError => b.greedy_had_error += 1,
                    WinReason::TypeMismatchVsGreedy => b.type_mismatch_vs_greedy += 1,
                    WinReason::RangeMismatchVsGreedy => b.range_mismatch_vs_greedy += 1,
                    WinReason::Others => b.win_others += 1,
                }
            }
        } else {
            match fail_reason(task, ours) {
                FailReason::NoCorrectInSamples => b.no_correct_in_samples += 1,
                FailReason::SameTypeAndRange => b.same_type_and_range += 1,
                FailReason::Others => b.fail_others += 1,
            }
        }
    }
    Ok(b)
}
