use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{EvalError, LabeledTask};
use crate::rerank::ScoredCandidate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scorer {
    Verifier,
    Generator,
    Joint,
}

impl Scorer {
    pub const ALL: [Scorer; 3] = [Scorer::Verifier, Scorer::Generator, Scorer::Joint];

    pub fn score(self, s: &ScoredCandidate) -> f64 {
        match self {
            Scorer::Verifier => s.verifier_prob,
            Scorer::Generator => s.gen_log_term,
            Scorer::Joint => s.joint_log_score,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scorer::Verifier => "verifier",
            Scorer::Generator => "generator",
            Scorer::Joint => "joint",
        }
    }
}

/// Precision of the candidates scoring at or above each percentile of the
/// pooled score distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurve {
    pub percentiles: Vec<u32>,
    pub verifier: Vec<f64>,
    pub generator: Vec<f64>,
    pub joint: Vec<f64>,
}

impl CalibrationCurve {
    pub fn curve(&self, scorer: Scorer) -> &[f64] {
        match scorer {
            Scorer::Verifier => &self.verifier,
            Scorer::Generator => &self.generator,
            Scorer::Joint => &self.joint,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("percentile,verifier,generator,joint\n");
        for (i, p) in self.percentiles.iter().enumerate() {
            writeln!(
                out,
                "{p},{:.6},{:.6},{:.6}",
                self.verifier[i], self.generator[i], self.joint[i]
            )
            .unwrap();
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:>10} {:>9} {:>9} {:>9}\n", "percentile", "verifier", "generator", "joint");
        for (i, p) in self.percentiles.iter().enumerate() {
            writeln!(
                out,
                "{p:>10} {:>9.4} {:>9.4} {:>9.4}",
                self.verifier[i], self.generator[i], self.joint[i]
            )
            .unwrap();
        }
        out
    }
}

/// Nearest-rank percentile of ascending-sorted `sorted`, `p` in 1..=100.
pub fn percentile_threshold(sorted: &[f64], p: u32) -> f64 {
    let n = sorted.len();
    let rank = ((p as f64 / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

fn precision_curve(pairs: &[(f64, bool)], percentiles: &[u32]) -> Vec<f64> {
    let mut sorted: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    sorted.sort_by(f64::total_cmp);
    percentiles
        .iter()
        .map(|&p| {
            let threshold = percentile_threshold(&sorted, p);
            let (mut kept, mut hits) = (0usize, 0usize);
            for &(score, correct) in pairs {
                if score >= threshold {
                    kept += 1;
                    hits += correct as usize;
                }
            }
            hits as f64 / kept as f64
        })
        .collect()
}

/// Calibration at percentiles 10, 20, ..., 100 over every candidate of the
/// corpus, for the verifier, the generator and their combination.
pub fn calibration_report(tasks: &[LabeledTask]) -> Result<CalibrationCurve, EvalError> {
    for t in tasks {
        t.check()?;
    }
    let percentiles: Vec<u32> = (1..=10).map(|i| i * 10).collect();
    let mut curves = Vec::with_capacity(3);
    for scorer in Scorer::ALL {
        let pairs: Vec<(f64, bool)> = tasks
            .iter()
            .flat_map(|t| {
                t.scored
                    .iter()
                    .zip(&t.labels)
                    .map(move |(s, l)| (scorer.score(s), l.is_correct()))
            })
            .collect();
        if pairs.is_empty() {
            return Err(EvalError::Empty);
        }
        curves.push(precision_curve(&pairs, &percentiles));
    }
    let joint = curves.pop().unwrap();
    let generator = curves.pop().unwrap();
    let verifier = curves.pop().unwrap();
    Ok(CalibrationCurve {
        percentiles,
        verifier,
        generator,
        joint,
    })
}
