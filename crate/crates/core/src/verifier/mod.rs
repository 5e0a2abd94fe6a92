//! The learned verifier `P(v = 1 | x, y, E(y))`.
//!
//! A logistic classifier over [`features`], trained with the per-task
//! normalized negative log-likelihood: each task's loss is averaged over its
//! own candidates so tasks with many unique programs do not dominate.
//! [`RemoteScorer`] delegates scoring to an external model over HTTP.

pub mod features;
mod remote;

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::TaskInstance;
use crate::execution::{ExecutedSet, ExecutionOutcome, ExecutionStatus};
use crate::generator::{normalize_program, CandidateSource, ProgramCandidate};
use crate::repr::{label_candidate, ReprError, VerificationLabel};

pub use features::{featurize, DIMENSION, FEATURE_SPEC_VERSION};
pub use remote::RemoteScorer;

const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum VerifierError {
    #[error("invalid gold fixture for task `{task_id}`: {reason}")]
    InvalidGold { task_id: String, reason: String },
    #[error("task `{0}` has no execution results")]
    MissingExecution(String),
    #[error(transparent)]
    Label(#[from] ReprError),
    #[error("degenerate training set: {0}")]
    Degenerate(String),
    #[error("feature spec mismatch: model has {model_version}/{model_dim}, example has {example_version}/{example_dim}")]
    SpecMismatch {
        model_version: String,
        model_dim: usize,
        example_version: String,
        example_dim: usize,
    },
    #[error("model file {path}: {message}")]
    ModelFile { path: String, message: String },
    #[error("remote scorer: {0}")]
    Remote(String),
    #[error("probability out of range: {0}")]
    OutOfRange(f64),
}

/// Generation-side metadata of the program being verified.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateMeta {
    pub cumulative_logprob: f64,
    pub token_count: usize,
    pub duplicate_count: u32,
    pub source: CandidateSource,
}

impl From<&ProgramCandidate> for CandidateMeta {
    fn from(c: &ProgramCandidate) -> Self {
        CandidateMeta {
            cumulative_logprob: c.cumulative_logprob,
            token_count: c.token_count,
            duplicate_count: c.duplicate_count,
            source: c.source,
        }
    }
}

/// `(x, y, z, v)` plus its feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationExample {
    pub task_id: String,
    pub input_text: String,
    pub program_text: String,
    pub result_text: String,
    pub status: ExecutionStatus,
    pub label: VerificationLabel,
    pub meta: CandidateMeta,
    pub features: Vec<f64>,
}

impl VerificationExample {
    pub fn new(
        task_id: &str,
        input_text: &str,
        program_text: &str,
        result_text: &str,
        status: ExecutionStatus,
        label: VerificationLabel,
        meta: CandidateMeta,
    ) -> Self {
        let mut ex = VerificationExample {
            task_id: task_id.to_string(),
            input_text: input_text.to_string(),
            program_text: program_text.to_string(),
            result_text: result_text.to_string(),
            status,
            label,
            meta,
            features: Vec::new(),
        };
        ex.features = featurize(&ex);
        ex
    }

    pub fn from_outcome(
        task: &TaskInstance,
        candidate: &ProgramCandidate,
        outcome: &ExecutionOutcome,
        label: VerificationLabel,
    ) -> Self {
        Self::new(
            &task.task_id,
            &task.nl_input,
            &candidate.program_text,
            &outcome.canonical_repr,
            outcome.status,
            label,
            CandidateMeta::from(candidate),
        )
    }
}

/// All verification examples of one task; the unit of loss normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingGroup {
    pub task_id: String,
    pub examples: Vec<VerificationExample>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Generation metadata for the gold program. Gold was not sampled, so it
/// borrows a matching candidate's metadata or the task's median.
fn gold_meta(gold_program: &str, entries: &[(ProgramCandidate, ExecutionOutcome)]) -> CandidateMeta {
    let key = normalize_program(gold_program);
    if let Some((c, _)) = entries.iter().find(|(c, _)| normalize_program(&c.program_text) == key) {
        return CandidateMeta {
            source: CandidateSource::Gold,
            ..CandidateMeta::from(c)
        };
    }
    if entries.is_empty() {
        return CandidateMeta {
            cumulative_logprob: 0.0,
            token_count: features::tokens(gold_program).len().max(1),
            duplicate_count: 1,
            source: CandidateSource::Gold,
        };
    }
    CandidateMeta {
        cumulative_logprob: median(entries.iter().map(|(c, _)| c.cumulative_logprob).collect()),
        token_count: median(entries.iter().map(|(c, _)| c.token_count as f64).collect()).round() as usize,
        duplicate_count: 1,
        source: CandidateSource::Gold,
    }
}

/// Builds one labeled group per task. When `use_gold_programs` is set and a
/// task has a gold program, it is executed with `execute_gold` and appended
/// as a positive example.
pub fn build_training_set(
    tasks: &[TaskInstance],
    executed: &[ExecutedSet],
    use_gold_programs: bool,
    execute_gold: &mut dyn FnMut(&TaskInstance, &str) -> ExecutionOutcome,
) -> Result<Vec<TrainingGroup>, VerifierError> {
    let by_id: HashMap<&str, &ExecutedSet> =
        executed.iter().map(|s| (s.task_id.as_str(), s)).collect();
    let mut groups = Vec::with_capacity(tasks.len());
    for task in tasks {
        let set = by_id
            .get(task.task_id.as_str())
            .ok_or_else(|| VerifierError::MissingExecution(task.task_id.clone()))?;
        let mut examples = Vec::with_capacity(set.entries.len() + 1);
        for (cand, outcome) in &set.entries {
            let label = label_candidate(outcome, task)?;
            examples.push(VerificationExample::from_outcome(task, cand, outcome, label));
        }
        if use_gold_programs {
            if let Some(gold) = &task.gold_program {
                let outcome = execute_gold(task, gold);
                let invalid = |reason: String| VerifierError::InvalidGold {
                    task_id: task.task_id.clone(),
                    reason,
                };
                if !outcome.status.is_success() {
                    return Err(invalid(outcome.canonical_repr));
                }
                if !label_candidate(&outcome, task)?.is_correct() {
                    return Err(invalid(format!(
                        "gold program yields `{}`, gold result differs",
                        outcome.canonical_repr
                    )));
                }
                examples.push(VerificationExample::new(
                    &task.task_id,
                    &task.nl_input,
                    &normalize_program(gold),
                    &outcome.canonical_repr,
                    outcome.status,
                    VerificationLabel::Correct,
                    gold_meta(gold, &set.entries),
                ));
            }
        }
        if !examples.is_empty() {
            groups.push(TrainingGroup {
                task_id: task.task_id.clone(),
                examples,
            });
        }
    }
    Ok(groups)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    /// Per-epoch cap on examples drawn from each task group.
    pub downsample_cap: usize,
    /// Task groups per gradient step.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs: 50,
            learning_rate: 0.5,
            l2: 1e-4,
            downsample_cap: 20,
            batch_size: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierModel {
    pub feature_spec_version: String,
    pub dimension: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub config: TrainingConfig,
    pub seed: u64,
    /// Full-corpus objective after each epoch.
    pub training_log: Vec<f64>,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl VerifierModel {
    pub fn zeros(dimension: usize) -> Self {
        VerifierModel {
            feature_spec_version: FEATURE_SPEC_VERSION.to_string(),
            dimension,
            weights: vec![0.0; dimension],
            bias: 0.0,
            config: TrainingConfig::default(),
            seed: 0,
            training_log: Vec::new(),
        }
    }

    pub fn logit(&self, features: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(features)
            .map(|(w, f)| w * f)
            .sum::<f64>()
            + self.bias
    }

    pub fn predict(&self, features: &[f64]) -> f64 {
        sigmoid(self.logit(features))
    }

    pub fn save(&self, path: &Path) -> Result<(), VerifierError> {
        let text = serde_json::to_string_pretty(self).expect("models serialize");
        fs::write(path, text + "\n").map_err(|e| VerifierError::ModelFile {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, VerifierError> {
        let err = |message: String| VerifierError::ModelFile {
            path: path.display().to_string(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let model: VerifierModel = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        if model.weights.len() != model.dimension {
            return Err(err(format!(
                "{} weights for dimension {}",
                model.weights.len(),
                model.dimension
            )));
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub bias: f64,
}

fn log_prob_of_label(model: &VerifierModel, ex: &VerificationExample) -> (f64, f64) {
    let p = model.predict(&ex.features);
    let v = ex.label.as_f64();
    let p_clamped = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let lp = if v == 1.0 { p_clamped.ln() } else { (1.0 - p_clamped).ln() };
    (lp, p - v)
}

/// Loss of one task group, `-(1/|S|) * sum log P(v_i | ...)`, and its
/// analytic gradient.
pub fn loss_and_gradient(model: &VerifierModel, group: &[&VerificationExample]) -> (f64, Gradient) {
    let n = group.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Gradient {
        weights: vec![0.0; model.dimension],
        bias: 0.0,
    };
    for ex in group {
        let (lp, residual) = log_prob_of_label(model, ex);
        loss -= lp;
        for (g, f) in grad.weights.iter_mut().zip(&ex.features) {
            *g += residual * f;
        }
        grad.bias += residual;
    }
    grad.weights.iter_mut().for_each(|g| *g /= n);
    grad.bias /= n;
    (loss / n, grad)
}

/// Mean group loss over the corpus plus the L2 penalty.
pub fn objective(model: &VerifierModel, groups: &[TrainingGroup], l2: f64) -> f64 {
    if groups.is_empty() {
        return 0.0;
    }
    let total: f64 = groups
        .iter()
        .map(|g| {
            let refs: Vec<&VerificationExample> = g.examples.iter().collect();
            loss_and_gradient(model, &refs).0
        })
        .sum();
    let penalty = 0.5 * l2 * model.weights.iter().map(|w| w * w).sum::<f64>();
    total / groups.len() as f64 + penalty
}

fn downsample<'a>(
    group: &'a TrainingGroup,
    cap: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<&'a VerificationExample> {
    if group.examples.len() <= cap {
        return group.examples.iter().collect();
    }
    let mut idx = rand::seq::index::sample(rng, group.examples.len(), cap).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| &group.examples[i]).collect()
}

/// Mini-batch gradient descent over task groups. Each epoch re-draws the
/// per-group downsample and the group order from the seeded generator.
pub fn train(groups: &[TrainingGroup], config: &TrainingConfig) -> Result<VerifierModel, VerifierError> {
    let groups: Vec<&TrainingGroup> = groups.iter().filter(|g| !g.examples.is_empty()).collect();
    let first = groups
        .first()
        .ok_or_else(|| VerifierError::Degenerate("no examples".into()))?;
    let dimension = first.examples[0].features.len();
    let mut positives = 0usize;
    let mut total = 0usize;
    for ex in groups.iter().flat_map(|g| &g.examples) {
        if ex.features.len() != dimension {
            return Err(VerifierError::Degenerate("inconsistent feature dimension".into()));
        }
        positives += ex.label.is_correct() as usize;
        total += 1;
    }
    if positives == 0 || positives == total {
        return Err(VerifierError::Degenerate(
            "all labels are identical".into(),
        ));
    }
    if config.downsample_cap == 0 || config.batch_size == 0 {
        return Err(VerifierError::Degenerate("downsample_cap and batch_size must be >= 1".into()));
    }

    let owned: Vec<TrainingGroup> = groups.iter().map(|g| (*g).clone()).collect();
    let mut model = VerifierModel::zeros(dimension);
    model.config = config.clone();
    model.seed = config.seed;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    for _ in 0..config.epochs {
        let sampled: Vec<Vec<&VerificationExample>> = owned
            .iter()
            .map(|g| downsample(g, config.downsample_cap, &mut rng))
            .collect();
        let mut order: Vec<usize> = (0..sampled.len()).collect();
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let mut step = Gradient {
                weights: vec![0.0; dimension],
                bias: 0.0,
            };
            for &gi in batch {
                let (_, g) = loss_and_gradient(&model, &sampled[gi]);
                for (s, v) in step.weights.iter_mut().zip(&g.weights) {
                    *s += v;
                }
                step.bias += g.bias;
            }
            let scale = 1.0 / batch.len() as f64;
            for (w, s) in model.weights.iter_mut().zip(&step.weights) {
                *w -= config.learning_rate * (s * scale + config.l2 * *w);
            }
            model.bias -= config.learning_rate * step.bias * scale;
        }
        model.training_log.push(objective(&model, &owned, config.l2));
    }
    Ok(model)
}

/// Verification probability of one example under a local model.
pub fn score(model: &VerifierModel, example: &VerificationExample) -> Result<f64, VerifierError> {
    if model.feature_spec_version != FEATURE_SPEC_VERSION || example.features.len() != model.dimension {
        return Err(VerifierError::SpecMismatch {
            model_version: model.feature_spec_version.clone(),
            model_dim: model.dimension,
            example_version: FEATURE_SPEC_VERSION.to_string(),
            example_dim: example.features.len(),
        });
    }
    Ok(model.predict(&example.features))
}

/// Either a local model or a remote scoring endpoint.
pub enum Verifier {
    Local(VerifierModel),
    Remote(RemoteScorer),
}

impl Verifier {
    pub fn probability(&self, example: &VerificationExample) -> Result<f64, VerifierError> {
        match self {
            Verifier::Local(m) => score(m, example),
            Verifier::Remote(r) => r.remote_score(example),
        }
    }
}
