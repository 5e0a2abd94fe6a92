//! Program candidates: sampling from a completion endpoint, greedy decoding,
//! and deduplication into candidate sets.

mod http;
pub mod mock;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetKind, FewShotPrompt};

pub use http::{Attempt, HttpEndpoint, RetryPolicy};
pub(crate) use http::classify;

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("invalid sampling config: {0}")]
    Config(String),
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed endpoint response: {0}")]
    Response(String),
    #[error("logprobs required")]
    MissingLogprobs,
    #[error("empty program")]
    EmptyProgram,
}

/// Temperature-sampling settings for one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub k: usize,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
    pub normalize_logprob: bool,
    /// Completions requested per endpoint call.
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
}

fn default_batch_size() -> usize {
    20
}

impl SamplingConfig {
    /// Defaults: 50 samples at T = 0.6; length-normalized
    /// log-probabilities for the script and function kinds only.
    pub fn for_kind(kind: DatasetKind) -> Self {
        SamplingConfig {
            k: 50,
            temperature: 0.6,
            max_tokens: 256,
            stop_sequences: Vec::new(),
            normalize_logprob: default_normalization(kind),
            batch_size: default_batch_size(),
        }
    }

    pub fn validate(&self) -> Result<(), GeneratorError> {
        if self.k == 0 {
            return Err(GeneratorError::Config("k must be >= 1".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(GeneratorError::Config("temperature must be > 0".into()));
        }
        if self.max_tokens == 0 {
            return Err(GeneratorError::Config("max_tokens must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(GeneratorError::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

pub fn default_normalization(kind: DatasetKind) -> bool {
    !matches!(kind, DatasetKind::SqlQuery)
}

/// One undeduplicated draw, as returned by an endpoint or read from an
/// offline sample file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSample {
    pub task_id: String,
    pub program_text: String,
    pub token_logprobs: Vec<f64>,
    /// Marks the greedy-decoded program in offline files.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub greedy: bool,
}

impl RawSample {
    pub fn validate(&self) -> Result<(), String> {
        if self.token_logprobs.is_empty() {
            return Err("empty token_logprobs".into());
        }
        for lp in &self.token_logprobs {
            if !lp.is_finite() {
                return Err("non-finite logprob".into());
            }
            if *lp > 0.0 {
                return Err("logprob > 0".into());
            }
        }
        Ok(())
    }

    pub fn cumulative_logprob(&self) -> f64 {
        self.token_logprobs.iter().sum()
    }

    fn into_candidate(self, source: CandidateSource) -> ProgramCandidate {
        ProgramCandidate {
            cumulative_logprob: self.cumulative_logprob(),
            token_count: self.token_logprobs.len(),
            program_text: self.program_text,
            duplicate_count: 1,
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateSource {
    Sampled,
    Greedy,
    Gold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramCandidate {
    pub program_text: String,
    pub cumulative_logprob: f64,
    pub token_count: usize,
    pub duplicate_count: u32,
    pub source: CandidateSource,
}

impl ProgramCandidate {
    /// `log P_LM(y|x)`, optionally divided by the token count.
    pub fn generation_log_term(&self, normalize: bool) -> f64 {
        if normalize {
            self.cumulative_logprob / self.token_count.max(1) as f64
        } else {
            self.cumulative_logprob
        }
    }
}

/// Deduplicated candidates of one task, sorted by descending log-probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub task_id: String,
    pub candidates: Vec<ProgramCandidate>,
    pub raw_sample_count: usize,
}

/// Dedup key: line endings normalized to `\n`, trailing whitespace removed.
pub fn normalize_program(text: &str) -> String {
    text.replace("\r\n", "\n").replace('\r', "\n").trim_end().to_string()
}

/// Merges duplicate programs. Counts are summed, the maximum log-probability
/// wins, and a greedy copy marks the merged candidate as greedy. Empty
/// programs are dropped and not counted.
pub fn dedup_candidates(
    task_id: &str,
    raw: &[RawSample],
    greedy: Option<ProgramCandidate>,
) -> CandidateSet {
    let mut merged: Vec<ProgramCandidate> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut raw_sample_count = 0;

    let sampled = raw
        .iter()
        .map(|s| s.clone().into_candidate(CandidateSource::Sampled));
    for cand in sampled.chain(greedy) {
        let key = normalize_program(&cand.program_text);
        if key.is_empty() {
            continue;
        }
        if cand.source == CandidateSource::Sampled {
            raw_sample_count += cand.duplicate_count as usize;
        }
        match index.get(&key) {
            Some(&i) => merge_into(&mut merged[i], cand),
            None => {
                index.insert(key.clone(), merged.len());
                merged.push(ProgramCandidate {
                    program_text: key,
                    ..cand
                });
            }
        }
    }
    // Stable: equal log-probabilities keep first-appearance order.
    merged.sort_by(|a, b| b.cumulative_logprob.total_cmp(&a.cumulative_logprob));
    CandidateSet {
        task_id: task_id.to_string(),
        candidates: merged,
        raw_sample_count,
    }
}

fn merge_into(existing: &mut ProgramCandidate, other: ProgramCandidate) {
    existing.duplicate_count += other.duplicate_count;
    if other.cumulative_logprob > existing.cumulative_logprob {
        existing.cumulative_logprob = other.cumulative_logprob;
        existing.token_count = other.token_count;
    }
    if source_rank(other.source) > source_rank(existing.source) {
        existing.source = other.source;
    }
}

fn source_rank(source: CandidateSource) -> u8 {
    match source {
        CandidateSource::Sampled => 0,
        CandidateSource::Greedy => 1,
        CandidateSource::Gold => 2,
    }
}

/// Re-deduplicates an existing set (used by idempotence checks and when
/// merging sets from several sampling runs).
pub fn dedup_set(set: &CandidateSet) -> CandidateSet {
    let mut merged: Vec<ProgramCandidate> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for cand in &set.candidates {
        let key = normalize_program(&cand.program_text);
        match index.get(&key) {
            Some(&i) => merge_into(&mut merged[i], cand.clone()),
            None => {
                index.insert(key.clone(), merged.len());
                merged.push(ProgramCandidate {
                    program_text: key,
                    ..cand.clone()
                });
            }
        }
    }
    merged.sort_by(|a, b| b.cumulative_logprob.total_cmp(&a.cumulative_logprob));
    CandidateSet {
        task_id: set.task_id.clone(),
        candidates: merged,
        raw_sample_count: set.raw_sample_count,
    }
}

/// Request body of an OpenAI-completions-compatible endpoint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub n: usize,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub stop: Vec<String>,
    pub logprobs: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub token_logprobs: Option<Vec<f64>>,
}

pub trait GeneratorEndpoint: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<Vec<Completion>, GeneratorError>;
}

fn completion_to_sample(task_id: &str, c: Completion) -> Result<RawSample, GeneratorError> {
    let token_logprobs = c.token_logprobs.ok_or(GeneratorError::MissingLogprobs)?;
    if token_logprobs.is_empty() {
        return Err(GeneratorError::MissingLogprobs);
    }
    let sample = RawSample {
        task_id: task_id.to_string(),
        program_text: c.text,
        // Endpoints occasionally report tiny positive values from rounding.
        token_logprobs: token_logprobs.into_iter().map(|lp| lp.min(0.0)).collect(),
        greedy: false,
    };
    sample.validate().map_err(GeneratorError::Response)?;
    Ok(sample)
}

/// Draws up to `config.k` samples in batches of `config.batch_size`.
/// Empty completions are discarded.
pub fn sample_candidates(
    task_id: &str,
    prompt: &FewShotPrompt,
    config: &SamplingConfig,
    endpoint: &dyn GeneratorEndpoint,
) -> Result<Vec<RawSample>, GeneratorError> {
    config.validate()?;
    let mut samples = Vec::with_capacity(config.k);
    let mut drawn = 0;
    while drawn < config.k {
        let n = config.batch_size.min(config.k - drawn);
        let request = CompletionRequest {
            prompt: prompt.rendered.clone(),
            n,
            temperature: config.temperature,
            max_tokens: config.max_tokens,
            stop: config.stop_sequences.clone(),
            logprobs: 1,
        };
        let choices = endpoint.complete(&request)?;
        if choices.is_empty() {
            break;
        }
        drawn += choices.len().min(n);
        for c in choices.into_iter().take(n) {
            let sample = completion_to_sample(task_id, c)?;
            if !normalize_program(&sample.program_text).is_empty() {
                samples.push(sample);
            }
        }
    }
    Ok(samples)
}

/// Argmax decoding, requested as a single completion at temperature 0.
pub fn greedy_candidate(
    task_id: &str,
    prompt: &FewShotPrompt,
    config: &SamplingConfig,
    endpoint: &dyn GeneratorEndpoint,
) -> Result<ProgramCandidate, GeneratorError> {
    let request = CompletionRequest {
        prompt: prompt.rendered.clone(),
        n: 1,
        temperature: 0.0,
        max_tokens: config.max_tokens,
        stop: config.stop_sequences.clone(),
        logprobs: 1,
    };
    let choice = endpoint
        .complete(&request)?
        .into_iter()
        .next()
        .ok_or_else(|| GeneratorError::Response("no choices".into()))?;
    let sample = completion_to_sample(task_id, choice)?;
    let text = normalize_program(&sample.program_text);
    if text.is_empty() {
        return Err(GeneratorError::EmptyProgram);
    }
    let mut cand = sample.into_candidate(CandidateSource::Greedy);
    cand.program_text = text;
    Ok(cand)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::mock::ScriptedEndpoint;

    fn raw(text: &str, lps: &[f64]) -> RawSample {
        RawSample {
            task_id: "t".into(),
            program_text: text.into(),
            token_logprobs: lps.to_vec(),
            greedy: false,
        }
    }

    fn prompt() -> FewShotPrompt {
        FewShotPrompt {
            kind: DatasetKind::SqlQuery,
            exemplars: vec![],
            rendered: "-- Question: q\n-- SQL:\n".into(),
        }
    }

    #[test]
    fn config_defaults_follow_dataset_kind() {
        assert!(!SamplingConfig::for_kind(DatasetKind::SqlQuery).normalize_logprob);
        assert!(SamplingConfig::for_kind(DatasetKind::ScalarScript).normalize_logprob);
        assert!(SamplingConfig::for_kind(DatasetKind::FunctionWithTests).normalize_logprob);
        let c = SamplingConfig::for_kind(DatasetKind::SqlQuery);
        assert_eq!((c.k, c.temperature), (50, 0.6));
        let mut bad = c.clone();
        bad.temperature = 0.0;
        assert!(bad.validate().is_err());
        bad = c;
        bad.k = 0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn total_collision() {
        let samples: Vec<_> = (0..7).map(|_| raw("SELECT 1", &[-0.5])).collect();
        let set = dedup_candidates("t", &samples, None);
        assert_eq!(set.candidates.len(), 1);
        assert_eq!(set.candidates[0].duplicate_count, 7);
        assert_eq!(set.raw_sample_count, 7);
    }

    #[test]
    fn no_collision() {
        let samples: Vec<_> = (0..5).map(|i| raw(&format!("SELECT {i}"), &[-(i as f64)])).collect();
        let set = dedup_candidates("t", &samples, None);
        assert_eq!(set.candidates.len(), 5);
        assert!(set.candidates.iter().all(|c| c.duplicate_count == 1));
        assert_eq!(set.candidates[0].program_text, "SELECT 0");
    }

    #[test]
    fn trailing_whitespace_and_line_endings_merge() {
        let samples = vec![raw("a\r\nb  \n", &[-1.0]), raw("a\nb", &[-0.5, -0.25])];
        let set = dedup_candidates("t", &samples, None);
        assert_eq!(set.candidates.len(), 1);
        let c = &set.candidates[0];
        assert_eq!(c.program_text, "a\nb");
        assert_eq!(c.cumulative_logprob, -0.75);
        assert_eq!(c.token_count, 2);
    }

    #[test]
    fn greedy_takes_precedence_when_merged() {
        let samples = vec![raw("x", &[-2.0]), raw("y", &[-1.0])];
        let greedy = raw("x", &[-0.5]).into_candidate(CandidateSource::Greedy);
        let set = dedup_candidates("t", &samples, Some(greedy));
        assert_eq!(set.candidates.len(), 2);
        let x = set.candidates.iter().find(|c| c.program_text == "x").unwrap();
        assert_eq!(x.source, CandidateSource::Greedy);
        assert_eq!(x.duplicate_count, 2);
        assert_eq!(x.cumulative_logprob, -0.5);
        assert_eq!(set.raw_sample_count, 2);
    }

    #[test]
    fn scripted_logprobs_are_summed() {
        let ep = ScriptedEndpoint::new(vec![
            Completion { text: "SELECT 1".into(), token_logprobs: Some(vec![-0.25, -0.5, -0.125]) },
            Completion { text: "SELECT 2".into(), token_logprobs: Some(vec![-1.5]) },
        ]);
        let mut cfg = SamplingConfig::for_kind(DatasetKind::SqlQuery);
        cfg.k = 2;
        let samples = sample_candidates("t", &prompt(), &cfg, &ep).unwrap();
        assert_eq!(samples.len(), 2);
        assert_eq!(samples[0].cumulative_logprob(), -0.25 + -0.5 + -0.125);
        assert_eq!(samples[1].cumulative_logprob(), -1.5);
    }

    #[test]
    fn batching_is_transparent() {
        let ep = ScriptedEndpoint::new(vec![Completion {
            text: "SELECT 1".into(),
            token_logprobs: Some(vec![-0.1]),
        }]);
        let mut cfg = SamplingConfig::for_kind(DatasetKind::SqlQuery);
        cfg.k = 45;
        cfg.batch_size = 20;
        let samples = sample_candidates("t", &prompt(), &cfg, &ep).unwrap();
        assert_eq!(samples.len(), 45);
        assert_eq!(ep.requests().iter().map(|r| r.n).collect::<Vec<_>>(), [20, 20, 5]);
    }

    #[test]
    fn missing_logprobs_is_an_error() {
        let ep = ScriptedEndpoint::new(vec![Completion { text: "SELECT 1".into(), token_logprobs: None }]);
        let mut cfg = SamplingConfig::for_kind(DatasetKind::SqlQuery);
        cfg.k = 1;
        let err = sample_candidates("t", &prompt(), &cfg, &ep).unwrap_err();
        assert_eq!(err.to_string(), "logprobs required");
    }

    #[test]
    fn empty_greedy_completion_rejected() {
        let ep = ScriptedEndpoint::new(vec![Completion { text: "  \n".into(), token_logprobs: Some(vec![-0.1]) }]);
        let cfg = SamplingConfig::for_kind(DatasetKind::SqlQuery);
        let err = greedy_candidate("t", &prompt(), &cfg, &ep).unwrap_err();
        assert_eq!(err.to_string(), "empty program");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn samples() -> impl Strategy<Value = Vec<RawSample>> {
            prop::collection::vec(
                (
                    prop::sample::select(vec!["a", "a ", "b", "b\r\n", "c", "d\n"]),
                    prop::collection::vec(-5.0f64..0.0, 1..4),
                ),
                0..30,
            )
            .prop_map(|v| v.into_iter().map(|(t, lp)| raw(t, &lp)).collect())
        }

        proptest! {
            #[test]
            fn dedup_is_idempotent(raw in samples()) {
                let once = dedup_candidates("t", &raw, None);
                prop_assert_eq!(dedup_set(&once), once);
            }

            #[test]
            fn dedup_preserves_counts_and_bounds_logprob(raw in samples()) {
                let set = dedup_candidates("t", &raw, None);
                let total: u32 = set.candidates.iter().map(|c| c.duplicate_count).sum();
                prop_assert_eq!(total as usize, raw.len());
                prop_assert_eq!(set.raw_sample_count, raw.len());
                let max_raw = raw.iter().map(|s| s.cumulative_logprob()).fold(f64::NEG_INFINITY, f64::max);
                let max_set = set.candidates.iter().map(|c| c.cumulative_logprob).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(max_set <= max_raw);
                for w in set.candidates.windows(2) {
                    prop_assert!(w[0].cumulative_logprob >= w[1].cumulative_logprob);
                }
                let mut texts: Vec<_> = set.candidates.iter().map(|c| c.program_text.clone()).collect();
                texts.sort();
                texts.dedup();
                prop_assert_eq!(texts.len(), set.candidates.len());
            }
        }
    }
}
