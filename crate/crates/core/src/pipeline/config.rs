use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::dataset::DatasetKind;
use crate::execution::ExecutionLimits;
use crate::generator::{default_normalization, SamplingConfig};
use crate::rerank::{RerankConfig, Strategy};
use crate::verifier::TrainingConfig;

/// Whole-run configuration, one TOML section per stage. Relative paths are
/// resolved against the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub run: RunSection,
    pub data: DataSection,
    #[serde(default)]
    pub generator: GeneratorSection,
    #[serde(default)]
    pub execution: ExecutionSection,
    #[serde(default)]
    pub verifier: VerifierSection,
    #[serde(default)]
    pub rerank: RerankSection,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub work_dir: PathBuf,
    /// Defaults to `work_dir`.
    pub report_dir: Option<PathBuf>,
    pub strategies: Vec<Strategy>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 0,
            work_dir: PathBuf::from("work"),
            report_dir: None,
            strategies: Strategy::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub kind: DatasetKind,
    /// Needed only when the verifier is trained in this run.
    pub train_tasks: Option<PathBuf>,
    pub eval_tasks: PathBuf,
    /// Offline sample files; without them candidates come from the endpoint.
    pub train_samples: Option<PathBuf>,
    pub eval_samples: Option<PathBuf>,
    pub exemplars: Option<PathBuf>,
    pub prompt_template: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSection {
    pub endpoint: Option<String>,
    pub model: Option<String>,
    /// Name of the environment variable holding the API key.
    pub api_key_env: Option<String>,
    pub k: Option<usize>,
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    pub stop: Vec<String>,
    pub batch_size: Option<usize>,
    pub normalize_logprob: Option<bool>,
    pub timeout_secs: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExecutionSection {
    pub timeout_ms: u64,
    pub max_output_cells: usize,
    pub max_result_bytes: usize,
    pub parallelism: usize,
    /// Command line of the script runner, e.g. `["python3", "runner.py"]`.
    pub runner: Vec<String>,
}

impl Default for ExecutionSection {
    fn default() -> Self {
        let limits = ExecutionLimits::default();
        ExecutionSection {
            timeout_ms: limits.timeout.as_millis() as u64,
            max_output_cells: limits.max_output_cells,
            max_result_bytes: limits.max_result_bytes,
            parallelism: 1,
            runner: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifierSection {
    /// A saved model; when set, the train stage is skipped.
    pub model: Option<PathBuf>,
    /// A remote scoring endpoint; when set, the train stage is skipped.
    pub remote_url: Option<String>,
    pub use_gold_programs: bool,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub downsample_cap: usize,
    pub batch_size: usize,
}

impl Default for VerifierSection {
    fn default() -> Self {
        let t = TrainingConfig::default();
        VerifierSection {
            model: None,
            remote_url: None,
            use_gold_programs: true,
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            l2: t.l2,
            downsample_cap: t.downsample_cap,
            batch_size: t.batch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RerankSection {
    pub aggregate: bool,
    pub epsilon: f64,
}

impl Default for RerankSection {
    fn default() -> Self {
        RerankSection {
            aggregate: true,
            epsilon: RerankConfig::default().epsilon,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let mut config = Self::parse(&text)?;
        config.base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        Ok(config)
    }

    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        let config: PipelineConfig =
            toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if self.run.strategies.is_empty() {
            return bad("run.strategies is empty");
        }
        if self.execution.parallelism == 0 {
            return bad("execution.parallelism must be >= 1");
        }
        if self.execution.timeout_ms == 0 {
            return bad("execution.timeout_ms must be >= 1");
        }
        if !(self.rerank.epsilon >= 0.0 && self.rerank.epsilon < 1.0) {
            return bad("rerank.epsilon must be in [0, 1)");
        }
        if self.verifier.downsample_cap == 0 || self.verifier.batch_size == 0 {
            return bad("verifier.downsample_cap and verifier.batch_size must be >= 1");
        }
        if self.verifier.model.is_some() && self.verifier.remote_url.is_some() {
            return bad("set at most one of verifier.model and verifier.remote_url");
        }
        Ok(())
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn work_dir(&self) -> PathBuf {
        self.resolve(&self.run.work_dir)
    }

    pub fn report_dir(&self) -> PathBuf {
        match &self.run.report_dir {
            Some(p) => self.resolve(p),
            None => self.work_dir(),
        }
    }

    /// Hex SHA-256 of the configuration as written (paths unresolved), so
    /// equal configs in different directories share a digest.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_string(self).expect("configs serialize");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn limits(&self) -> ExecutionLimits {
        ExecutionLimits {
            timeout: Duration::from_millis(self.execution.timeout_ms),
            max_output_cells: self.execution.max_output_cells,
            max_result_bytes: self.execution.max_result_bytes,
        }
    }

    pub fn normalize_logprob(&self) -> bool {
        self.generator
            .normalize_logprob
            .unwrap_or_else(|| default_normalization(self.data.kind))
    }

    pub fn sampling(&self) -> SamplingConfig {
        let mut s = SamplingConfig::for_kind(self.data.kind);
        let g = &self.generator;
        s.k = g.k.unwrap_or(s.k);
        s.temperature = g.temperature.unwrap_or(s.temperature);
        s.max_tokens = g.max_tokens.unwrap_or(s.max_tokens);
        s.stop_sequences = g.stop.clone();
        s.batch_size = g.batch_size.unwrap_or(s.batch_size);
        s.normalize_logprob = self.normalize_logprob();
        s
    }

    pub fn training(&self) -> TrainingConfig {
        let v = &self.verifier;
        TrainingConfig {
            epochs: v.epochs,
            learning_rate: v.learning_rate,
            l2: v.l2,
            downsample_cap: v.downsample_cap,
            batch_size: v.batch_size,
            seed: self.run.seed,
        }
    }

    pub fn rerank_config(&self) -> RerankConfig {
        RerankConfig {
            normalize_logprob: self.normalize_logprob(),
            epsilon: self.rerank.epsilon,
        }
    }

    pub fn trains_verifier(&self) -> bool {
        self.verifier.model.is_none() && self.verifier.remote_url.is_none()
    }
}
