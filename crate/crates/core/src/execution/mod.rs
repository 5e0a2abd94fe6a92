//! Executes candidate programs against their context.
//!
//! SQL runs in-process on a fresh, read-only embedded database per
//! candidate. Scripts and function tests are sent to an external runner
//! process over a line-delimited JSON protocol; the harness keeps kill
//! authority over that process.

mod script;
mod sql;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::ExecutionContext;
use crate::generator::{CandidateSet, ProgramCandidate};
use crate::repr::{EquivalenceKey, ERROR_PREFIX, TIMEOUT_REPR};

pub use script::{
    execute_function_tests, execute_scalar_script, ProcessRunner, ProcessRunnerFactory,
    RunnerFactory, RunnerFault, RunnerOp, RunnerRequest, RunnerResponse, ScriptRunner,
    TestOutcome, WireTestCase, RUNNER_GRACE,
};
pub use sql::execute_sql;

#[derive(Debug, Error)]
pub enum ExecutionError {
    #[error("runner pool exhausted: {0}")]
    PoolExhausted(String),
    #[error("parallelism must be >= 1")]
    Parallelism,
    #[error("no script runner configured for a {0} context")]
    NoRunner(crate::dataset::DatasetKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionLimits {
    pub timeout: Duration,
    pub max_output_cells: usize,
    pub max_result_bytes: usize,
}

impl Default for ExecutionLimits {
    fn default() -> Self {
        ExecutionLimits {
            timeout: Duration::from_secs(10),
            max_output_cells: 64,
            max_result_bytes: 4096,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionStatus {
    Success,
    Error,
    Timeout,
}

impl ExecutionStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ExecutionStatus::Success => "success",
            ExecutionStatus::Error => "error",
            ExecutionStatus::Timeout => "timeout",
        }
    }

    pub fn is_success(self) -> bool {
        self == ExecutionStatus::Success
    }
}

/// Per-test result of a function-with-tests execution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestResult {
    pub status: ExecutionStatus,
    pub result_type: Option<String>,
    pub result_value: Option<String>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Payload {
    Table {
        headers: Vec<String>,
        rows: Vec<Vec<String>>,
    },
    Scalar {
        result_type: String,
        value: String,
    },
    Tests {
        results: Vec<TestResult>,
    },
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub status: ExecutionStatus,
    pub canonical_repr: String,
    pub equivalence_key: EquivalenceKey,
    pub payload: Payload,
    pub wall_time: Duration,
}

impl ExecutionOutcome {
    pub fn success(canonical_repr: String, payload: Payload, wall_time: Duration) -> Self {
        Self::build(ExecutionStatus::Success, canonical_repr, payload, wall_time)
    }

    /// Error outcome; the reason is normalized and prefixed with `ERROR: `.
    pub fn error(reason: &str, payload: Payload, wall_time: Duration) -> Self {
        let repr = crate::repr::CanonicalResult::error(reason).text;
        Self::build(ExecutionStatus::Error, repr, payload, wall_time)
    }

    /// Error outcome whose canonical text is already fully formed.
    pub(crate) fn error_repr(repr: String, payload: Payload, wall_time: Duration) -> Self {
        debug_assert!(repr.starts_with(ERROR_PREFIX));
        Self::build(ExecutionStatus::Error, repr, payload, wall_time)
    }

    pub fn timeout(wall_time: Duration) -> Self {
        Self::build(
            ExecutionStatus::Timeout,
            TIMEOUT_REPR.to_string(),
            Payload::None,
            wall_time,
        )
    }

    fn build(
        status: ExecutionStatus,
        canonical_repr: String,
        payload: Payload,
        wall_time: Duration,
    ) -> Self {
        let equivalence_key = EquivalenceKey::compute(status, &canonical_repr);
        ExecutionOutcome {
            status,
            canonical_repr,
            equivalence_key,
            payload,
            wall_time,
        }
    }
}

/// Candidates of one task paired with their outcomes, in candidate order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutedSet {
    pub task_id: String,
    pub entries: Vec<(ProgramCandidate, ExecutionOutcome)>,
}

/// Executes programs for one worker. Holds at most one runner process.
pub struct Worker {
    runner: Option<Box<dyn ScriptRunner>>,
}

impl Worker {
    pub fn for_context(
        context: &ExecutionContext,
        runners: Option<&dyn RunnerFactory>,
    ) -> Result<Self, ExecutionError> {
        let runner = match context {
            ExecutionContext::Database(_) => None,
            other => {
                let factory = runners.ok_or(ExecutionError::NoRunner(other.kind()))?;
                Some(factory.spawn()?)
            }
        };
        Ok(Worker { runner })
    }

    pub fn execute(
        &mut self,
        program: &str,
        context: &ExecutionContext,
        limits: &ExecutionLimits,
    ) -> ExecutionOutcome {
        match (context, self.runner.as_deref_mut()) {
            (ExecutionContext::Database(db), _) => execute_sql(program, db, limits),
            (ExecutionContext::Script(_), Some(runner)) => {
                execute_scalar_script(program, limits, runner)
            }
            (ExecutionContext::FunctionTests(ctx), Some(runner)) => {
                execute_function_tests(program, &ctx.tests, limits, runner)
            }
            (_, None) => ExecutionOutcome::error("no script runner", Payload::None, Duration::ZERO),
        }
    }
}

/// Executes every candidate of a set, each in isolation, with up to
/// `parallelism` workers. Output order matches input order.
pub fn execute_candidate_set(
    set: &CandidateSet,
    context: &ExecutionContext,
    limits: &ExecutionLimits,
    parallelism: usize,
    runners: Option<&dyn RunnerFactory>,
) -> Result<Vec<(ProgramCandidate, ExecutionOutcome)>, ExecutionError> {
    let programs: Vec<&str> = set.candidates.iter().map(|c| c.program_text.as_str()).collect();
    let programs = &programs;
    let outcomes = run_parallel(programs.len(), parallelism, || {
        let mut worker = Worker::for_context(context, runners)?;
        Ok(move |i: usize| worker.execute(programs[i], context, limits))
    })?;
    Ok(set.candidates.iter().cloned().zip(outcomes).collect())
}

/// Runs `count` jobs on `parallelism` scoped threads. `make_worker` builds
/// per-thread state; results are merged back in job order.
pub fn run_parallel<T, W, F>(
    count: usize,
    parallelism: usize,
    make_worker: F,
) -> Result<Vec<T>, ExecutionError>
where
    T: Send,
    W: FnMut(usize) -> T,
    F: Fn() -> Result<W, ExecutionError> + Sync,
{
    if parallelism == 0 {
        return Err(ExecutionError::Parallelism);
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let threads = parallelism.min(count);
    if threads == 1 {
        let mut work = make_worker()?;
        return Ok((0..count).map(&mut work).collect());
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..count).map(|_| None).collect());
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|_| {
                scope.spawn(|| -> Result<(), ExecutionError> {
                    let mut work = make_worker()?;
                    loop {
                        let i = next.fetch_add(1, Ordering::SeqCst);
                        if i >= count {
                            return Ok(());
                        }
                        let out = work(i);
                        slots.lock().unwrap()[i] = Some(out);
                    }
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("execution worker panicked"))
            .collect::<Result<Vec<()>, _>>()
    })?;
    Ok(slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|s| s.expect("every job slot is filled"))
        .collect())
}
