//! Fixed-dimension feature vector over (question, program, execution result).

use std::collections::HashSet;
use std::sync::OnceLock;

use regex::Regex;

use super::VerificationExample;
use crate::execution::ExecutionStatus;
use crate::repr::{
    integer_like, kind_of, MagnitudeBucket, MagnitudeClass, ResultKind, ValueType, ERROR_PREFIX,
};

pub const FEATURE_SPEC_VERSION: &str = "lever-features-v1";

pub const ERROR_BUCKETS: usize = 8;

/// Feature names in vector order.
pub const FEATURE_NAMES: [&str; 19 + ERROR_BUCKETS] = [
    "status_success",
    "status_error",
    "status_timeout",
    "kind_table",
    "kind_scalar",
    "kind_test_suite",
    "kind_error",
    "result_length_log",
    "numeric_negative",
    "magnitude_below_1",
    "magnitude_1_to_1e3",
    "magnitude_above_1e3",
    "type_cue_match",
    "overlap_question_result",
    "overlap_question_program",
    "program_length_log",
    "logprob_log",
    "normalized_logprob",
    "duplicate_count_log",
    "error_bucket_0",
    "error_bucket_1",
    "error_bucket_2",
    "error_bucket_3",
    "error_bucket_4",
    "error_bucket_5",
    "error_bucket_6",
    "error_bucket_7",
];

pub const DIMENSION: usize = FEATURE_NAMES.len();

const ERROR_BUCKET_OFFSET: usize = 19;

/// Answer type a question asks for, inferred from cue phrases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TypeCue {
    Count,
    Numeric,
    Boolean,
    Text,
}

fn has_phrase(question: &str, phrase: &str) -> bool {
    let q = format!(" {question} ");
    q.contains(&format!(" {phrase} "))
}

pub fn type_cue(question: &str) -> Option<TypeCue> {
    let q = tokens(question).join(" ");
    let any = |phrases: &[&str]| phrases.iter().any(|p| has_phrase(&q, p));
    if any(&["how many", "number of", "count"]) {
        Some(TypeCue::Count)
    } else if any(&["average", "mean", "total", "sum", "how much", "percentage", "percent", "ratio"]) {
        Some(TypeCue::Numeric)
    } else if ["is", "are", "does", "do", "was", "were", "can"]
        .iter()
        .any(|w| q.starts_with(&format!("{w} ")))
    {
        Some(TypeCue::Boolean)
    } else if any(&["who", "which", "name", "names", "list", "what is the name"]) {
        Some(TypeCue::Text)
    } else {
        None
    }
}

/// +1 when the result type matches the question's cue, -1 on a mismatch,
/// 0 without a cue or for errors and test suites.
pub fn type_cue_match(question: &str, result_text: &str) -> f64 {
    let Some(cue) = type_cue(question) else {
        return 0.0;
    };
    let vt = ValueType::of(result_text);
    let matched = match (&vt, cue) {
        (ValueType::Error | ValueType::TestSuite(_), _) => return 0.0,
        (ValueType::Number, TypeCue::Count) => integer_like(result_text),
        (ValueType::Number, TypeCue::Numeric) => true,
        (ValueType::Boolean, TypeCue::Boolean) => true,
        (ValueType::Number, TypeCue::Boolean) => result_text == "0" || result_text == "1",
        (ValueType::Text | ValueType::Table { .. }, TypeCue::Text) => true,
        _ => false,
    };
    if matched {
        1.0
    } else {
        -1.0
    }
}

fn token_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[A-Za-z0-9_]+").unwrap())
}

/// Lowercased alphanumeric tokens.
pub fn tokens(text: &str) -> Vec<String> {
    token_re()
        .find_iter(text)
        .map(|m| m.as_str().to_lowercase())
        .collect()
}

/// Jaccard similarity of the token sets; 0 when both are empty.
pub fn token_overlap(a: &str, b: &str) -> f64 {
    let sa: HashSet<String> = tokens(a).into_iter().collect();
    let sb: HashSet<String> = tokens(b).into_iter().collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        0.0
    } else {
        sa.intersection(&sb).count() as f64 / union as f64
    }
}

fn quoted_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#""[^"]*"|'[^']*'"#).unwrap())
}

/// Error class: the reason with quoted fragments removed, up to the first
/// colon. `no such column: years` and `no such column: yrs` share a class.
pub fn error_class(result_text: &str) -> Option<String> {
    let reason = result_text.strip_prefix(ERROR_PREFIX)?;
    let unquoted = quoted_re().replace_all(reason, "");
    let class = unquoted.split(':').next().unwrap_or("").trim().to_lowercase();
    Some(class)
}

fn fnv1a(text: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn error_bucket(result_text: &str) -> Option<usize> {
    error_class(result_text).map(|c| (fnv1a(&c) % ERROR_BUCKETS as u64) as usize)
}

/// Computes the feature vector of one example.
pub fn featurize(example: &VerificationExample) -> Vec<f64> {
    let mut f = vec![0.0; DIMENSION];
    let text = example.result_text.as_str();

    let status_idx = match example.status {
        ExecutionStatus::Success => 0,
        ExecutionStatus::Error => 1,
        ExecutionStatus::Timeout => 2,
    };
    f[status_idx] = 1.0;

    let kind_idx = match kind_of(text) {
        ResultKind::Table => 3,
        ResultKind::Scalar => 4,
        ResultKind::TestSuite => 5,
        ResultKind::Error => 6,
    };
    f[kind_idx] = 1.0;

    f[7] = (1.0 + text.chars().count() as f64).ln();

    if let Some(bucket) = MagnitudeBucket::of(text) {
        f[8] = bucket.negative as u8 as f64;
        f[match bucket.class {
            MagnitudeClass::Small => 9,
            MagnitudeClass::Medium => 10,
            MagnitudeClass::Large => 11,
        }] = 1.0;
    }

    f[12] = type_cue_match(&example.input_text, text);
    f[13] = token_overlap(&example.input_text, text);
    f[14] = token_overlap(&example.input_text, &example.program_text);
    f[15] = (1.0 + tokens(&example.program_text).len() as f64).ln();

    let lp = example.meta.cumulative_logprob;
    f[16] = -(1.0 + lp.abs()).ln();
    f[17] = (lp / example.meta.token_count.max(1) as f64).clamp(-10.0, 0.0);
    f[18] = (example.meta.duplicate_count.max(1) as f64).ln();

    if example.status != ExecutionStatus::Success {
        if let Some(b) = error_bucket(text) {
            f[ERROR_BUCKET_OFFSET + b] = 1.0;
        }
    }
    f
}
