//! Canonical execution-result strings, result equivalence and gold labeling.
//!
//! Canonical strings are what the verifier sees and what equivalence keys are
//! computed from, so every executor funnels its raw output through here.

use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{DatasetKind, TaskInstance};
use crate::execution::{ExecutionOutcome, ExecutionStatus, Payload};

pub const ERROR_PREFIX: &str = "ERROR: ";
pub const TIMEOUT_REPR: &str = "ERROR: Time out";
pub const EMPTY_TABLE: &str = "empty table";
pub const TRUNCATION_MARKER: &str = " || ... (truncated)";

/// Separator between rows (and between the header and the first row).
pub const ROW_SEP: &str = " || ";
/// Separator between cells of one row.
pub const CELL_SEP: &str = " | ";

const SIGNIFICANT_DIGITS: usize = 6;
const NUMERIC_REL_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum ReprError {
    #[error("ragged table: row {row} has {found} cells, expected {expected}")]
    RaggedRow {
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("unlabelable instance: {0}")]
    Unlabelable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResultKind {
    Table,
    Scalar,
    TestSuite,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalResult {
    pub text: String,
    pub kind: ResultKind,
}

impl CanonicalResult {
    pub fn error(reason: &str) -> Self {
        Self {
            text: format!("{ERROR_PREFIX}{}", normalize_error_message(reason)),
            kind: ResultKind::Error,
        }
    }
}

/// Binary verification label `v`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum VerificationLabel {
    Incorrect,
    Correct,
}

impl VerificationLabel {
    pub fn is_correct(self) -> bool {
        self == VerificationLabel::Correct
    }

    pub fn as_f64(self) -> f64 {
        match self {
            VerificationLabel::Incorrect => 0.0,
            VerificationLabel::Correct => 1.0,
        }
    }
}

impl From<bool> for VerificationLabel {
    fn from(correct: bool) -> Self {
        if correct {
            VerificationLabel::Correct
        } else {
            VerificationLabel::Incorrect
        }
    }
}

impl From<VerificationLabel> for u8 {
    fn from(label: VerificationLabel) -> u8 {
        label.is_correct() as u8
    }
}

impl TryFrom<u8> for VerificationLabel {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            0 => Ok(VerificationLabel::Incorrect),
            1 => Ok(VerificationLabel::Correct),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

/// Renders a float in the canonical numeric format: at most six significant
/// digits, no trailing zeros, integral values without a decimal point.
pub fn canonical_number(value: f64) -> String {
    if value.is_nan() {
        return "nan".to_string();
    }
    if value.is_infinite() {
        return if value > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    let rounded: f64 = format!("{:.*e}", SIGNIFICANT_DIGITS - 1, value)
        .parse()
        .unwrap_or(value);
    if rounded == 0.0 {
        return "0".to_string();
    }
    // f64 Display never uses exponent notation and prints the shortest
    // round-tripping decimal, which has at most six significant digits here.
    format!("{rounded}")
}

fn numeric_literal() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$").unwrap())
}

fn integer_literal() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[+-]?\d+$").unwrap())
}

/// Parses a decimal literal; rejects `nan`, `inf` and anything with spaces.
pub fn parse_numeric(text: &str) -> Option<f64> {
    if numeric_literal().is_match(text) {
        text.parse().ok()
    } else {
        None
    }
}

/// Whether `text` is an integer literal.
pub fn integer_like(text: &str) -> bool {
    integer_literal().is_match(text)
}

fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Canonical form of a free-text value: internal whitespace collapsed, trimmed.
pub fn canonical_text(text: &str) -> String {
    collapse_whitespace(text)
}

fn is_int_type(t: &str) -> bool {
    matches!(
        t,
        "int" | "integer" | "bigint" | "long" | "int32" | "int64" | "numpy.int32" | "numpy.int64"
    )
}

fn is_float_type(t: &str) -> bool {
    matches!(
        t,
        "float" | "real" | "double" | "decimal" | "float32" | "float64" | "numpy.float32"
            | "numpy.float64"
            | "Decimal"
    )
}

fn is_bool_type(t: &str) -> bool {
    matches!(t, "bool" | "boolean" | "numpy.bool_")
}

/// Canonicalizes a raw `(type, value)` pair into a scalar result.
pub fn canonicalize_scalar(raw_type: &str, raw_value: &str) -> CanonicalResult {
    let t = raw_type.trim();
    let v = raw_value.trim();
    let text = if is_int_type(t) {
        if integer_literal().is_match(v) {
            match v.parse::<i128>() {
                Ok(n) => n.to_string(),
                Err(_) => parse_numeric(v).map(canonical_number).unwrap_or_else(|| v.to_string()),
            }
        } else {
            parse_numeric(v).map(canonical_number).unwrap_or_else(|| v.to_string())
        }
    } else if is_float_type(t) {
        parse_numeric(v).map(canonical_number).unwrap_or_else(|| v.to_lowercase())
    } else if is_bool_type(t) {
        v.to_lowercase()
    } else {
        canonical_text(v)
    };
    CanonicalResult {
        text,
        kind: ResultKind::Scalar,
    }
}

/// One test-suite entry: `type=<t>; value=<v>`.
pub fn test_entry(raw_type: &str, raw_value: &str) -> String {
    let value = canonicalize_scalar(raw_type, raw_value).text;
    format!("type={}; value={}", raw_type.trim(), value)
}

/// Linearizes a result table as `col: h1 | h2 || row1: c11 | c12 || ...`.
///
/// Cells are expected to already be canonical. At most `cap` cells are kept
/// (whole rows only), after which the truncation marker is appended.
pub fn linearize_table(
    headers: &[String],
    rows: &[Vec<String>],
    cap: usize,
) -> Result<CanonicalResult, ReprError> {
    for (i, row) in rows.iter().enumerate() {
        if row.len() != headers.len() {
            return Err(ReprError::RaggedRow {
                row: i + 1,
                found: row.len(),
                expected: headers.len(),
            });
        }
    }
    if rows.is_empty() {
        return Ok(CanonicalResult {
            text: EMPTY_TABLE.to_string(),
            kind: ResultKind::Table,
        });
    }
    let mut text = format!("col: {}", headers.join(CELL_SEP));
    let mut used = 0usize;
    let mut truncated = false;
    for (i, row) in rows.iter().enumerate() {
        if used + row.len() > cap {
            truncated = true;
            break;
        }
        used += row.len();
        text.push_str(ROW_SEP);
        text.push_str(&format!("row{}: {}", i + 1, row.join(CELL_SEP)));
    }
    if truncated {
        text.push_str(TRUNCATION_MARKER);
    }
    Ok(CanonicalResult {
        text,
        kind: ResultKind::Table,
    })
}

/// Truncates a canonical string to at most `max_bytes` bytes (on a char
/// boundary), marking the cut.
pub fn cap_bytes(text: String, max_bytes: usize) -> String {
    const MARK: &str = " ... (truncated)";
    if text.len() <= max_bytes {
        return text;
    }
    let mut end = max_bytes.saturating_sub(MARK.len());
    while end > 0 && !text.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}{MARK}", text[..end].trim_end())
}

fn absolute_path() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"(?:[A-Za-z]:)?(?:[/\\][\w.\-]+){2,}[/\\]?"#).unwrap())
}

/// Machine-independent error reason: absolute paths replaced, whitespace
/// collapsed.
pub fn normalize_error_message(message: &str) -> String {
    let stripped = absolute_path().replace_all(message, "<path>");
    let collapsed = collapse_whitespace(&stripped);
    if collapsed.is_empty() {
        "unknown error".to_string()
    } else {
        collapsed
    }
}

/// Infers the kind of a canonical string from its shape.
pub fn kind_of(text: &str) -> ResultKind {
    if text.starts_with(ERROR_PREFIX) {
        ResultKind::Error
    } else if text == EMPTY_TABLE || text.starts_with("col: ") {
        ResultKind::Table
    } else if text.starts_with("type=") {
        ResultKind::TestSuite
    } else {
        ResultKind::Scalar
    }
}

/// Digest identifying candidates that execute to the same result.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EquivalenceKey(String);

impl EquivalenceKey {
    pub fn compute(status: ExecutionStatus, canonical_repr: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(status.as_str().as_bytes());
        hasher.update([0u8]);
        hasher.update(canonical_repr.as_bytes());
        let digest = hasher.finalize();
        EquivalenceKey(hex::encode(&digest[..16]))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for EquivalenceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn equivalence_key(outcome: &ExecutionOutcome) -> EquivalenceKey {
    EquivalenceKey::compute(outcome.status, &outcome.canonical_repr)
}

/// Splits a canonical string into comparable atoms. For tables the header
/// segment is dropped: column names depend on how a query spells its
/// projections, not on what it returns.
fn atoms(text: &str) -> Vec<&str> {
    let body = if text.starts_with("col: ") {
        match text.find(ROW_SEP) {
            Some(i) => &text[i + ROW_SEP.len()..],
            None => "",
        }
    } else {
        text
    };
    body.split(ROW_SEP)
        .flat_map(|row| {
            let cells = match row.find(": ") {
                Some(i) if row.starts_with("row") => &row[i + 2..],
                _ => row,
            };
            cells.split(CELL_SEP)
        })
        .map(str::trim)
        .collect()
}

fn atoms_match(candidate: &str, gold: &str) -> bool {
    match (parse_numeric(candidate), parse_numeric(gold)) {
        (Some(a), Some(b)) => (a - b).abs() <= NUMERIC_REL_TOLERANCE * b.abs().max(1.0),
        _ => candidate == gold,
    }
}

/// Compares a candidate's canonical result with the gold result, atom by
/// atom, with a relative tolerance on numeric atoms.
pub fn results_match(candidate: &str, gold: &str) -> bool {
    if candidate == gold {
        return true;
    }
    if kind_of(candidate) != kind_of(gold) && !(is_single_atom(candidate) && is_single_atom(gold)) {
        return false;
    }
    let a = atoms(candidate);
    let b = atoms(gold);
    a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| atoms_match(x, y))
}

fn is_single_atom(text: &str) -> bool {
    kind_of(text) == ResultKind::Scalar
}

/// Labels a candidate outcome against the task's gold annotation.
pub fn label_candidate(
    outcome: &ExecutionOutcome,
    gold: &TaskInstance,
) -> Result<VerificationLabel, ReprError> {
    match gold.kind {
        DatasetKind::FunctionWithTests => {
            let expected = gold.context.tests().map(|t| t.len()).unwrap_or(0);
            if expected == 0 {
                return Err(ReprError::Unlabelable(gold.task_id.clone()));
            }
            if outcome.status != ExecutionStatus::Success {
                return Ok(VerificationLabel::Incorrect);
            }
            let all_passed = match &outcome.payload {
                Payload::Tests { results } => {
                    results.len() == expected && results.iter().all(|r| r.passed)
                }
                _ => false,
            };
            Ok(all_passed.into())
        }
        DatasetKind::SqlQuery | DatasetKind::ScalarScript => {
            let gold_result = gold
                .gold_result
                .as_deref()
                .ok_or_else(|| ReprError::Unlabelable(gold.task_id.clone()))?;
            if outcome.status != ExecutionStatus::Success {
                return Ok(VerificationLabel::Incorrect);
            }
            Ok(results_match(&outcome.canonical_repr, gold_result.trim()).into())
        }
    }
}

/// Coarse value type of a result, used for the type-cue feature and the
/// win/fail outcome analysis.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ValueType {
    Number,
    Boolean,
    Text,
    Table { columns: usize },
    EmptyTable,
    TestSuite(Vec<String>),
    Error,
}

impl ValueType {
    pub fn of(text: &str) -> Self {
        match kind_of(text) {
            ResultKind::Error => ValueType::Error,
            ResultKind::Table if text == EMPTY_TABLE => ValueType::EmptyTable,
            ResultKind::Table => {
                let header = text.split(ROW_SEP).next().unwrap_or("");
                ValueType::Table {
                    columns: header.split(CELL_SEP).count(),
                }
            }
            ResultKind::TestSuite => ValueType::TestSuite(
                text.split(ROW_SEP)
                    .map(|entry| {
                        entry
                            .strip_prefix("type=")
                            .and_then(|rest| rest.split(';').next())
                            .unwrap_or("error")
                            .to_string()
                    })
                    .collect(),
            ),
            ResultKind::Scalar => {
                if parse_numeric(text).is_some() {
                    ValueType::Number
                } else if text == "true" || text == "false" {
                    ValueType::Boolean
                } else {
                    ValueType::Text
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MagnitudeClass {
    /// |v| < 1
    Small,
    /// 1 <= |v| <= 1e3
    Medium,
    /// |v| > 1e3
    Large,
}

/// Sign and magnitude class of a numeric scalar result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MagnitudeBucket {
    pub negative: bool,
    pub class: MagnitudeClass,
}

impl MagnitudeBucket {
    pub fn of(text: &str) -> Option<Self> {
        if kind_of(text) != ResultKind::Scalar {
            return None;
        }
        let v = parse_numeric(text)?;
        let a = v.abs();
        let class = if a < 1.0 {
            MagnitudeClass::Small
        } else if a <= 1e3 {
            MagnitudeClass::Medium
        } else {
            MagnitudeClass::Large
        };
        Some(MagnitudeBucket {
            negative: v < 0.0,
            class,
        })
    }
}
