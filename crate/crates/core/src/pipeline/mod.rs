//! Stage orchestration: sample, execute, label, train, rerank, evaluate.
//!
//! Every stage reads its inputs from and writes its output to the work
//! directory, so any stage can be re-run alone and a full run resumes from
//! whatever is already there. A change of configuration digest invalidates
//! the stored artifacts.

mod config;

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{
    build_prompt, load_exemplars, load_offline_samples, load_tasks, write_offline_samples, write_tasks,
    DatasetError, PromptTemplate, TaskInstance,
};
use crate::eval::{
    calibration_report, outcome_analysis, select_for_task, CalibrationCurve, EvalError, EvaluationReport,
    LabeledTask, OutcomeBuckets,
};
use crate::execution::{
    run_parallel, ExecutedSet, ExecutionError, ProcessRunnerFactory, RunnerFactory, Worker,
};
use crate::generator::{
    dedup_candidates, greedy_candidate, sample_candidates, CandidateSet, CandidateSource, GeneratorError,
    HttpEndpoint, ProgramCandidate, RawSample,
};
use crate::repr::{label_candidate, ReprError, VerificationLabel};
use crate::rerank::{select, task_seed, ScoredCandidate, Strategy};
use crate::synthetic::{generate, SyntheticConfig};
use crate::verifier::{
    build_training_set, train, RemoteScorer, VerificationExample, Verifier, VerifierError, VerifierModel,
};

pub use config::{
    DataSection, ExecutionSection, GeneratorSection, PipelineConfig, RerankSection, RunSection,
    VerifierSection,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("{stage} stage: missing input {}", path.display())]
    MissingInput { stage: Stage, path: PathBuf },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: line {line}: {message}", path.display())]
    Artifact {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Execution(#[from] ExecutionError),
    #[error(transparent)]
    Label(#[from] ReprError),
    #[error(transparent)]
    Verifier(#[from] VerifierError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl PipelineError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Sample,
    Execute,
    Label,
    Train,
    Rerank,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Sample,
        Stage::Execute,
        Stage::Label,
        Stage::Train,
        Stage::Rerank,
        Stage::Eval,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Sample => "sample",
            Stage::Execute => "execute",
            Stage::Label => "label",
            Stage::Train => "train",
            Stage::Rerank => "rerank",
            Stage::Eval => "eval",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
        }
    }
}

/// Per-task labels of an executed set, in candidate order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub task_id: String,
    pub labels: Vec<VerificationLabel>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RunManifest {
    config_digest: String,
}

/// Files written by [`Pipeline::report`].
#[derive(Debug, Clone, PartialEq)]
pub struct Reports {
    pub calibration: Option<CalibrationCurve>,
    pub outcomes: Option<OutcomeBuckets>,
}

fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| PipelineError::io(&tmp, e))?;
    f.write_all(contents).map_err(|e| PipelineError::io(&tmp, e))?;
    f.sync_all().map_err(|e| PipelineError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| PipelineError::io(path, e))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), PipelineError> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("artifacts serialize"));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path, stage: Stage) -> Result<Vec<T>, PipelineError> {
    if !path.exists() {
        return Err(PipelineError::MissingInput {
            stage,
            path: path.to_path_buf(),
        });
    }
    let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| PipelineError::Artifact {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

fn require(path: &Path, stage: Stage) -> Result<(), PipelineError> {
    if path.exists() {
        Ok(())
    } else {
        Err(PipelineError::MissingInput {
            stage,
            path: path.to_path_buf(),
        })
    }
}

/// Splits offline samples into sampled draws and the greedy candidate.
pub fn candidates_from_samples(task_id: &str, samples: &[RawSample]) -> CandidateSet {
    let (greedy, sampled): (Vec<&RawSample>, Vec<&RawSample>) = samples.iter().partition(|s| s.greedy);
    let sampled: Vec<RawSample> = sampled.into_iter().cloned().collect();
    let greedy = greedy.first().map(|g| ProgramCandidate {
        program_text: g.program_text.clone(),
        cumulative_logprob: g.cumulative_logprob(),
        token_count: g.token_logprobs.len(),
        duplicate_count: 1,
        source: CandidateSource::Greedy,
    });
    dedup_candidates(task_id, &sampled, greedy)
}

pub struct Pipeline {
    pub config: PipelineConfig,
    digest: String,
    /// Stages run by this instance, e.g. `execute:eval`.
    pub log: Vec<String>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let digest = config.digest();
        Ok(Pipeline {
            config,
            digest,
            log: Vec::new(),
        })
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    fn split_dir(&self, split: Split) -> PathBuf {
        self.config.work_dir().join(split.as_str())
    }

    pub fn candidates_path(&self, split: Split) -> PathBuf {
        self.split_dir(split).join("candidates.jsonl")
    }

    pub fn executed_path(&self, split: Split) -> PathBuf {
        self.split_dir(split).join("executed.jsonl")
    }

    pub fn labels_path(&self, split: Split) -> PathBuf {
        self.split_dir(split).join("labels.jsonl")
    }

    pub fn model_path(&self) -> PathBuf {
        match &self.config.verifier.model {
            Some(p) => self.config.resolve(p),
            None => self.config.work_dir().join("model.json"),
        }
    }

    pub fn scored_path(&self) -> PathBuf {
        self.split_dir(Split::Eval).join("scored.jsonl")
    }

    pub fn reranked_path(&self) -> PathBuf {
        self.split_dir(Split::Eval).join("reranked.jsonl")
    }

    pub fn report_path(&self) -> PathBuf {
        self.config.report_dir().join("report.json")
    }

    fn manifest_path(&self) -> PathBuf {
        self.config.work_dir().join("run.json")
    }

    fn tasks_path(&self, split: Split, stage: Stage) -> Result<PathBuf, PipelineError> {
        match split {
            Split::Eval => Ok(self.config.resolve(&self.config.data.eval_tasks)),
            Split::Train => self
                .config
                .data
                .train_tasks
                .as_ref()
                .map(|p| self.config.resolve(p))
                .ok_or_else(|| PipelineError::Config(format!("{stage} stage on the train split requires data.train_tasks"))),
        }
    }

    pub fn load_tasks(&self, split: Split, stage: Stage) -> Result<Vec<TaskInstance>, PipelineError> {
        let path = self.tasks_path(split, stage)?;
        require(&path, stage)?;
        Ok(load_tasks(&path, self.config.data.kind)?)
    }

    fn runner_factory(&self) -> Option<ProcessRunnerFactory> {
        (!self.config.execution.runner.is_empty()).then(|| ProcessRunnerFactory {
            command: self.config.execution.runner.clone(),
            seed: self.config.run.seed,
        })
    }

    /// Splits the run touches: the train split only when training here.
    pub fn splits(&self) -> Vec<Split> {
        if self.config.trains_verifier() {
            vec![Split::Train, Split::Eval]
        } else {
            vec![Split::Eval]
        }
    }

    /// Produces deduplicated candidate sets from the offline sample file,
    /// or from the configured endpoint when there is none.
    pub fn sample(&mut self, split: Split) -> Result<(), PipelineError> {
        let tasks = self.load_tasks(split, Stage::Sample)?;
        let offline = match split {
            Split::Train => &self.config.data.train_samples,
            Split::Eval => &self.config.data.eval_samples,
        };
        let sets: Vec<CandidateSet> = if let Some(path) = offline {
            let path = self.config.resolve(path);
            require(&path, Stage::Sample)?;
            let grouped = load_offline_samples(&path)?;
            tasks
                .iter()
                .map(|t| {
                    let samples = grouped.get(&t.task_id).map(Vec::as_slice).unwrap_or(&[]);
                    candidates_from_samples(&t.task_id, samples)
                })
                .collect()
        } else {
            self.sample_from_endpoint(&tasks)?
        };
        write_jsonl(&self.candidates_path(split), &sets)?;
        self.log.push(format!("sample:{}", split.as_str()));
        Ok(())
    }

    fn sample_from_endpoint(&self, tasks: &[TaskInstance]) -> Result<Vec<CandidateSet>, PipelineError> {
        let g = &self.config.generator;
        let url = g.endpoint.as_ref().ok_or_else(|| {
            PipelineError::Config("sample stage needs offline samples or generator.endpoint".into())
        })?;
        let api_key = g.api_key_env.as_ref().and_then(|v| std::env::var(v).ok());
        let mut endpoint = HttpEndpoint::new(url.clone())
            .with_api_key(api_key)
            .with_model(g.model.clone());
        if let Some(secs) = g.timeout_secs {
            endpoint = endpoint.with_timeout(std::time::Duration::from_secs(secs));
        }
        let template = match &self.config.data.prompt_template {
            Some(p) => PromptTemplate::load(&self.config.resolve(p))?,
            None => PromptTemplate::default_for(self.config.data.kind),
        };
        let exemplars = match &self.config.data.exemplars {
            Some(p) => load_exemplars(&self.config.resolve(p))?,
            None => Vec::new(),
        };
        let sampling = self.config.sampling();
        tasks
            .iter()
            .map(|t| {
                let prompt = build_prompt(t, &exemplars, &template)?;
                let raw = sample_candidates(&t.task_id, &prompt, &sampling, &endpoint)?;
                let greedy = greedy_candidate(&t.task_id, &prompt, &sampling, &endpoint)?;
                Ok(dedup_candidates(&t.task_id, &raw, Some(greedy)))
            })
            .collect()
    }

    /// Executes every candidate of the split, task-parallel with ordered merge.
    pub fn execute(&mut self, split: Split) -> Result<(), PipelineError> {
        let tasks = self.load_tasks(split, Stage::Execute)?;
        let sets: Vec<CandidateSet> = read_jsonl(&self.candidates_path(split), Stage::Execute)?;
        let by_id: HashMap<&str, &CandidateSet> = sets.iter().map(|s| (s.task_id.as_str(), s)).collect();
        let empty: Vec<ProgramCandidate> = Vec::new();
        let per_task: Vec<(&TaskInstance, &Vec<ProgramCandidate>)> = tasks
            .iter()
            .map(|t| (t, by_id.get(t.task_id.as_str()).map(|s| &s.candidates).unwrap_or(&empty)))
            .collect();
        let jobs: Vec<(usize, usize)> = per_task
            .iter()
            .enumerate()
            .flat_map(|(ti, (_, cands))| (0..cands.len()).map(move |ci| (ti, ci)))
            .collect();

        let limits = self.config.limits();
        let factory = self.runner_factory();
        let factory_ref: Option<&dyn RunnerFactory> = factory.as_ref().map(|f| f as &dyn RunnerFactory);
        let outcomes = match tasks.first() {
            None => Vec::new(),
            Some(first) => run_parallel(jobs.len(), self.config.execution.parallelism, || {
                let mut worker = Worker::for_context(&first.context, factory_ref)?;
                let (per_task, jobs, limits) = (&per_task, &jobs, &limits);
                Ok(move |j: usize| {
                    let (ti, ci) = jobs[j];
                    let (task, cands) = per_task[ti];
                    worker.execute(&cands[ci].program_text, &task.context, limits)
                })
            })?,
        };

        let mut outcomes = outcomes.into_iter();
        let executed: Vec<ExecutedSet> = per_task
            .iter()
            .map(|(task, cands)| ExecutedSet {
                task_id: task.task_id.clone(),
                entries: cands
                    .iter()
                    .map(|c| (c.clone(), outcomes.next().expect("one outcome per job")))
                    .collect(),
            })
            .collect();
        write_jsonl(&self.executed_path(split), &executed)?;
        self.log.push(format!("execute:{}", split.as_str()));
        Ok(())
    }

    pub fn label(&mut self, split: Split) -> Result<(), PipelineError> {
        let tasks = self.load_tasks(split, Stage::Label)?;
        let executed: Vec<ExecutedSet> = read_jsonl(&self.executed_path(split), Stage::Label)?;
        let by_id: HashMap<&str, &TaskInstance> = tasks.iter().map(|t| (t.task_id.as_str(), t)).collect();
        let mut records = Vec::with_capacity(executed.len());
        for set in &executed {
            let task = by_id.get(set.task_id.as_str()).ok_or_else(|| {
                PipelineError::Config(format!("executed set for unknown task `{}`", set.task_id))
            })?;
            let labels = set
                .entries
                .iter()
                .map(|(_, o)| label_candidate(o, task))
                .collect::<Result<Vec<_>, _>>()?;
            records.push(LabelRecord {
                task_id: set.task_id.clone(),
                labels,
            });
        }
        write_jsonl(&self.labels_path(split), &records)?;
        self.log.push(format!("label:{}", split.as_str()));
        Ok(())
    }

    pub fn train(&mut self) -> Result<(), PipelineError> {
        if !self.config.trains_verifier() {
            return Err(PipelineError::Config(
                "train stage is disabled when verifier.model or verifier.remote_url is set".into(),
            ));
        }
        let tasks = self.load_tasks(Split::Train, Stage::Train)?;
        let executed: Vec<ExecutedSet> = read_jsonl(&self.executed_path(Split::Train), Stage::Train)?;
        let limits = self.config.limits();
        let factory = self.runner_factory();
        let mut worker: Option<Worker> = None;
        let mut worker_error: Option<ExecutionError> = None;
        let mut run_gold = |task: &TaskInstance, program: &str| {
            if worker.is_none() {
                match Worker::for_context(&task.context, factory.as_ref().map(|f| f as &dyn RunnerFactory)) {
                    Ok(w) => worker = Some(w),
                    Err(e) => {
                        let outcome = crate::execution::ExecutionOutcome::error(
                            &e.to_string(),
                            crate::execution::Payload::None,
                            std::time::Duration::ZERO,
                        );
                        worker_error = Some(e);
                        return outcome;
                    }
                }
            }
            worker.as_mut().unwrap().execute(program, &task.context, &limits)
        };
        let groups = build_training_set(&tasks, &executed, self.config.verifier.use_gold_programs, &mut run_gold);
        if let Some(e) = worker_error {
            return Err(e.into());
        }
        let model = train(&groups?, &self.config.training())?;
        let path = self.model_path();
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
        }
        model.save(&path)?;
        self.log.push("train".into());
        Ok(())
    }

    fn verifier(&self) -> Result<Verifier, PipelineError> {
        if let Some(url) = &self.config.verifier.remote_url {
            return Ok(Verifier::Remote(RemoteScorer::new(url.clone())));
        }
        let path = self.model_path();
        require(&path, Stage::Rerank)?;
        Ok(Verifier::Local(VerifierModel::load(&path)?))
    }

    /// Scores the eval split and writes one reranked record per strategy
    /// and task.
    pub fn rerank(&mut self) -> Result<(), PipelineError> {
        let tasks = self.load_tasks(Split::Eval, Stage::Rerank)?;
        let executed: Vec<ExecutedSet> = read_jsonl(&self.executed_path(Split::Eval), Stage::Rerank)?;
        let labels: Vec<LabelRecord> = read_jsonl(&self.labels_path(Split::Eval), Stage::Rerank)?;
        let verifier = self.verifier()?;
        let labeled = score_corpus(&tasks, &executed, &labels, &verifier, &self.config)?;
        let mut records = Vec::new();
        for &strategy in &self.config.run.strategies {
            for t in &labeled {
                records.push(select(
                    &t.task_id,
                    strategy,
                    &t.scored,
                    &t.labels,
                    self.config.rerank.aggregate,
                    task_seed(self.config.run.seed, &t.task_id),
                ));
            }
        }
        write_jsonl(&self.scored_path(), &labeled)?;
        write_jsonl(&self.reranked_path(), &records)?;
        self.log.push("rerank".into());
        Ok(())
    }

    pub fn evaluate(&mut self) -> Result<EvaluationReport, PipelineError> {
        let labeled: Vec<LabeledTask> = read_jsonl(&self.scored_path(), Stage::Eval)?;
        let report = EvaluationReport::evaluate(
            &labeled,
            &self.config.run.strategies,
            self.config.rerank.aggregate,
            self.config.run.seed,
            &self.digest,
        )?;
        let dir = self.config.report_dir();
        write_atomic(&dir.join("report.json"), report.to_json().as_bytes())?;
        write_atomic(&dir.join("report.txt"), report.to_table().as_bytes())?;
        self.log.push("eval".into());
        Ok(report)
    }

    /// Calibration and win/fail analysis of the scored eval split.
    pub fn report(&mut self, calibration: bool, outcomes: bool) -> Result<Reports, PipelineError> {
        let labeled: Vec<LabeledTask> = read_jsonl(&self.scored_path(), Stage::Eval)?;
        let dir = self.config.report_dir();
        let mut reports = Reports {
            calibration: None,
            outcomes: None,
        };
        if calibration {
            let curve = calibration_report(&labeled)?;
            write_atomic(&dir.join("calibration.csv"), curve.to_csv().as_bytes())?;
            write_atomic(&dir.join("calibration.txt"), curve.to_table().as_bytes())?;
            let json = serde_json::to_string_pretty(&curve).expect("curves serialize") + "\n";
            write_atomic(&dir.join("calibration.json"), json.as_bytes())?;
            reports.calibration = Some(curve);
        }
        if outcomes {
            let (aggregate, seed) = (self.config.rerank.aggregate, self.config.run.seed);
            let pick = |s: Strategy| -> Vec<Option<usize>> {
                labeled
                    .iter()
                    .map(|t| select_for_task(t, s, aggregate, seed).selected_index)
                    .collect()
            };
            let buckets = outcome_analysis(&labeled, &pick(Strategy::Lever), &pick(Strategy::Greedy))?;
            let json = serde_json::to_string_pretty(&buckets).expect("buckets serialize") + "\n";
            write_atomic(&dir.join("outcomes.json"), json.as_bytes())?;
            write_atomic(&dir.join("outcomes.txt"), buckets.to_table().as_bytes())?;
            reports.outcomes = Some(buckets);
        }
        Ok(reports)
    }

    /// Runs one stage on every split it applies to.
    pub fn run_stage(&mut self, stage: Stage) -> Result<Option<EvaluationReport>, PipelineError> {
        self.check_manifest()?;
        self.stage(stage)
    }

    fn stage(&mut self, stage: Stage) -> Result<Option<EvaluationReport>, PipelineError> {
        match stage {
            Stage::Sample | Stage::Execute | Stage::Label => {
                for split in self.splits() {
                    match stage {
                        Stage::Sample => self.sample(split)?,
                        Stage::Execute => self.execute(split)?,
                        _ => self.label(split)?,
                    }
                }
            }
            Stage::Train => self.train()?,
            Stage::Rerank => self.rerank()?,
            Stage::Eval => return self.evaluate().map(Some),
        }
        Ok(None)
    }

    fn artifacts(&self, stage: Stage) -> Vec<PathBuf> {
        let per_split = |f: &dyn Fn(Split) -> PathBuf| self.splits().into_iter().map(f).collect::<Vec<_>>();
        match stage {
            Stage::Sample => per_split(&|s| self.candidates_path(s)),
            Stage::Execute => per_split(&|s| self.executed_path(s)),
            Stage::Label => per_split(&|s| self.labels_path(s)),
            Stage::Train if self.config.trains_verifier() => vec![self.model_path()],
            Stage::Train => Vec::new(),
            Stage::Rerank => vec![self.scored_path(), self.reranked_path()],
            Stage::Eval => vec![self.report_path()],
        }
    }

    /// Drops artifacts written under a different configuration.
    fn check_manifest(&self) -> Result<(), PipelineError> {
        let path = self.manifest_path();
        let current = fs::read_to_string(&path)
            .ok()
            .and_then(|t| serde_json::from_str::<RunManifest>(&t).ok())
            .map(|m| m.config_digest);
        if current.as_deref() != Some(self.digest.as_str()) {
            for stage in Stage::ALL {
                for p in self.artifacts(stage) {
                    if p.exists() && (stage != Stage::Train || self.config.trains_verifier()) {
                        fs::remove_file(&p).map_err(|e| PipelineError::io(&p, e))?;
                    }
                }
            }
            let manifest = RunManifest {
                config_digest: self.digest.clone(),
            };
            let json = serde_json::to_string_pretty(&manifest).expect("manifests serialize") + "\n";
            write_atomic(&path, json.as_bytes())?;
        }
        Ok(())
    }

    /// Runs all stages, skipping those whose artifacts already exist.
    pub fn run(&mut self) -> Result<EvaluationReport, PipelineError> {
        self.check_manifest()?;
        for stage in [Stage::Sample, Stage::Execute, Stage::Label, Stage::Train, Stage::Rerank] {
            if stage == Stage::Train && !self.config.trains_verifier() {
                continue;
            }
            if self.artifacts(stage).iter().all(|p| p.exists()) {
                continue;
            }
            self.stage(stage)?;
        }
        self.evaluate()
    }
}

/// Joins executed sets with labels and verifier probabilities.
pub fn score_corpus(
    tasks: &[TaskInstance],
    executed: &[ExecutedSet],
    labels: &[LabelRecord],
    verifier: &Verifier,
    config: &PipelineConfig,
) -> Result<Vec<LabeledTask>, PipelineError> {
    let sets: HashMap<&str, &ExecutedSet> = executed.iter().map(|s| (s.task_id.as_str(), s)).collect();
    let labels: HashMap<&str, &LabelRecord> = labels.iter().map(|l| (l.task_id.as_str(), l)).collect();
    let rerank = config.rerank_config();
    let mut out = Vec::with_capacity(tasks.len());
    for task in tasks {
        let missing = |what: &str| {
            PipelineError::Config(format!("task `{}` has no {what}; re-run earlier stages", task.task_id))
        };
        let set = sets.get(task.task_id.as_str()).ok_or_else(|| missing("execution results"))?;
        let task_labels = labels.get(task.task_id.as_str()).ok_or_else(|| missing("labels"))?;
        if task_labels.labels.len() != set.entries.len() {
            return Err(missing("labels matching its executed set"));
        }
        let mut scored = Vec::with_capacity(set.entries.len());
        for ((cand, outcome), &label) in set.entries.iter().zip(&task_labels.labels) {
            let example = VerificationExample::from_outcome(task, cand, outcome, label);
            let p = verifier.probability(&example)?;
            scored.push(ScoredCandidate::new(cand.clone(), outcome.clone(), p, &rerank));
        }
        out.push(LabeledTask {
            task_id: task.task_id.clone(),
            scored,
            labels: task_labels.labels.clone(),
        });
    }
    Ok(out)
}

/// Writes a synthetic SQL experiment (train and eval corpora, offline
/// samples and a config file) into `dir`; returns the config path.
pub fn write_synthetic_experiment(
    dir: &Path,
    train_tasks: usize,
    eval_tasks: usize,
    seed: u64,
) -> Result<PathBuf, PipelineError> {
    fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    let splits = [("train", train_tasks, seed), ("eval", eval_tasks, seed.wrapping_add(1))];
    for (name, n, split_seed) in splits {
        let corpus = generate(&SyntheticConfig {
            tasks: n,
            seed: split_seed,
            id_prefix: name.to_string(),
            ..Default::default()
        });
        write_tasks(&dir.join(format!("{name}.jsonl")), &corpus.tasks)?;
        write_offline_samples(&dir.join(format!("{name}_samples.jsonl")), &corpus.samples)?;
    }
    let config = format!(
        "[run]\nseed = {seed}\nwork_dir = \"work\"\n\n\
         [data]\nkind = \"sql_query\"\n\
         train_tasks = \"train.jsonl\"\ntrain_samples = \"train_samples.jsonl\"\n\
         eval_tasks = \"eval.jsonl\"\neval_samples = \"eval_samples.jsonl\"\n"
    );
    let path = dir.join("lever.toml");
    write_atomic(&path, config.as_bytes())?;
    Ok(path)
}
