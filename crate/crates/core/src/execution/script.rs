//! Client side of the script-runner wire protocol.
//!
//! One JSON request per line on the runner's stdin, one JSON response per
//! line on its stdout. The runner enforces `timeout_ms` itself; the harness
//! waits an extra [`RUNNER_GRACE`] and then kills the process.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{ExecutionError, ExecutionLimits, ExecutionOutcome, ExecutionStatus, Payload, TestResult};
use crate::dataset::TestCase;
use crate::repr::{
    canonicalize_scalar, cap_bytes, normalize_error_message, test_entry, ERROR_PREFIX, ROW_SEP,
    TIMEOUT_REPR,
};

/// Extra wall time granted to the runner beyond the request timeout before
/// the harness kills it.
pub const RUNNER_GRACE: Duration = Duration::from_millis(500);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunnerOp {
    Scalar,
    Tests,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireTestCase {
    pub call: String,
    pub expected: String,
}

impl From<&TestCase> for WireTestCase {
    fn from(t: &TestCase) -> Self {
        WireTestCase {
            call: t.call.clone(),
            expected: t.expected.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunnerRequest {
    pub op: RunnerOp,
    pub program: String,
    pub tests: Vec<WireTestCase>,
    pub timeout_ms: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub status: ExecutionStatus,
    pub result_type: Option<String>,
    pub result_value: Option<String>,
    pub passed: bool,
    /// Not part of the required protocol; runners may report the reason here.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunnerResponse {
    pub status: ExecutionStatus,
    pub result_type: Option<String>,
    pub result_value: Option<String>,
    pub per_test: Option<Vec<TestOutcome>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunnerFault {
    /// No response within timeout + grace; the process was killed.
    Timeout,
    Crashed(String),
    Protocol(String),
}

pub trait ScriptRunner: Send {
    fn call(&mut self, request: &RunnerRequest, deadline: Duration) -> Result<RunnerResponse, RunnerFault>;

    /// Seed sent with every request.
    fn seed(&self) -> u64 {
        0
    }
}

pub trait RunnerFactory: Sync {
    fn spawn(&self) -> Result<Box<dyn ScriptRunner>, ExecutionError>;
}

struct LiveProcess {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl LiveProcess {
    fn kill(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// A runner subprocess, restarted on demand after a crash or kill.
pub struct ProcessRunner {
    command: Vec<String>,
    seed: u64,
    process: Option<LiveProcess>,
}

impl ProcessRunner {
    pub fn new(command: Vec<String>, seed: u64) -> Self {
        ProcessRunner {
            command,
            seed,
            process: None,
        }
    }

    fn start(&mut self) -> std::io::Result<&mut LiveProcess> {
        if self.process.is_none() {
            let (program, args) = self.command.split_first().ok_or_else(|| {
                std::io::Error::new(std::io::ErrorKind::InvalidInput, "empty runner command")
            })?;
            let mut child = Command::new(program)
                .args(args)
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .stderr(Stdio::null())
                .spawn()?;
            let stdin = child.stdin.take().expect("stdin is piped");
            let stdout = child.stdout.take().expect("stdout is piped");
            let (tx, rx) = mpsc::channel();
            std::thread::spawn(move || {
                let mut reader = BufReader::new(stdout);
                loop {
                    let mut line = String::new();
                    match reader.read_line(&mut line) {
                        Ok(0) => return,
                        Ok(_) => {
                            if tx.send(Ok(line)).is_err() {
                                return;
                            }
                        }
                        Err(e) => {
                            let _ = tx.send(Err(e));
                            return;
                        }
                    }
                }
            });
            self.process = Some(LiveProcess {
                child,
                stdin,
                lines: rx,
            });
        }
        Ok(self.process.as_mut().expect("process just started"))
    }

    fn reset(&mut self) {
        if let Some(p) = self.process.take() {
            p.kill();
        }
    }

    /// Whether a runner process is currently alive.
    pub fn is_alive(&mut self) -> bool {
        match self.process.as_mut() {
            Some(p) => matches!(p.child.try_wait(), Ok(None)),
            None => false,
        }
    }
}

impl Drop for ProcessRunner {
    fn drop(&mut self) {
        self.reset();
    }
}

impl ScriptRunner for ProcessRunner {
    fn call(&mut self, request: &RunnerRequest, deadline: Duration) -> Result<RunnerResponse, RunnerFault> {
        let mut line = serde_json::to_string(request).expect("requests serialize");
        line.push('\n');
        let process = self
            .start()
            .map_err(|e| RunnerFault::Crashed(format!("spawn failed: {e}")))?;
        if let Err(e) = process
            .stdin
            .write_all(line.as_bytes())
            .and_then(|_| process.stdin.flush())
        {
            self.reset();
            return Err(RunnerFault::Crashed(e.to_string()));
        }
        let received = process.lines.recv_timeout(deadline);
        match received {
            Ok(Ok(text)) => match serde_json::from_str::<RunnerResponse>(text.trim_end()) {
                Ok(resp) => Ok(resp),
                Err(e) => {
                    self.reset();
                    Err(RunnerFault::Protocol(e.to_string()))
                }
            },
            Ok(Err(e)) => {
                self.reset();
                Err(RunnerFault::Crashed(e.to_string()))
            }
            Err(RecvTimeoutError::Disconnected) => {
                self.reset();
                Err(RunnerFault::Crashed("runner exited".into()))
            }
            Err(RecvTimeoutError::Timeout) => {
                self.reset();
                Err(RunnerFault::Timeout)
            }
        }
    }

    fn seed(&self) -> u64 {
        self.seed
    }
}

#[derive(Debug, Clone)]
pub struct ProcessRunnerFactory {
    pub command: Vec<String>,
    pub seed: u64,
}

impl RunnerFactory for ProcessRunnerFactory {
    fn spawn(&self) -> Result<Box<dyn ScriptRunner>, ExecutionError> {
        let mut runner = ProcessRunner::new(self.command.clone(), self.seed);
        runner
            .start()
            .map_err(|e| ExecutionError::PoolExhausted(format!("{}: {e}", self.command.join(" "))))?;
        Ok(Box::new(runner))
    }
}

fn request(op: RunnerOp, program: &str, tests: &[TestCase], limits: &ExecutionLimits, seed: u64) -> RunnerRequest {
    RunnerRequest {
        op,
        program: program.to_string(),
        tests: tests.iter().map(WireTestCase::from).collect(),
        timeout_ms: limits.timeout.as_millis() as u64,
        seed,
    }
}

fn fault_outcome(fault: RunnerFault, elapsed: Duration) -> ExecutionOutcome {
    match fault {
        RunnerFault::Timeout => ExecutionOutcome::timeout(elapsed),
        RunnerFault::Crashed(_) => ExecutionOutcome::error("runner crashed", Payload::None, elapsed),
        RunnerFault::Protocol(_) => ExecutionOutcome::error("runner protocol", Payload::None, elapsed),
    }
}

/// Runs a script and reads back the variable named `answer`.
pub fn execute_scalar_script(
    program: &str,
    limits: &ExecutionLimits,
    runner: &mut dyn ScriptRunner,
) -> ExecutionOutcome {
    let start = Instant::now();
    let req = request(RunnerOp::Scalar, program, &[], limits, runner.seed());
    let resp = runner.call(&req, limits.timeout + RUNNER_GRACE);
    let elapsed = start.elapsed();
    let resp = match resp {
        Ok(r) => r,
        Err(f) => return fault_outcome(f, elapsed),
    };
    match resp.status {
        ExecutionStatus::Timeout => ExecutionOutcome::timeout(elapsed),
        ExecutionStatus::Error => ExecutionOutcome::error(
            resp.error.as_deref().unwrap_or("unknown error"),
            Payload::None,
            elapsed,
        ),
        ExecutionStatus::Success => {
            let Some(value) = resp.result_value else {
                return fault_outcome(RunnerFault::Protocol("missing result_value".into()), elapsed);
            };
            let result_type = resp.result_type.unwrap_or_else(|| "str".to_string());
            let canonical = canonicalize_scalar(&result_type, &value);
            ExecutionOutcome::success(
                cap_bytes(canonical.text.clone(), limits.max_result_bytes),
                Payload::Scalar {
                    result_type,
                    value: canonical.text,
                },
                elapsed,
            )
        }
    }
}

fn test_repr(t: &TestOutcome) -> String {
    match t.status {
        ExecutionStatus::Success => test_entry(
            t.result_type.as_deref().unwrap_or("NoneType"),
            t.result_value.as_deref().unwrap_or("None"),
        ),
        ExecutionStatus::Timeout => TIMEOUT_REPR.to_string(),
        ExecutionStatus::Error => format!(
            "{ERROR_PREFIX}{}",
            normalize_error_message(
                t.error
                    .as_deref()
                    .or(t.result_value.as_deref())
                    .unwrap_or("test raised")
            )
        ),
    }
}

/// Runs the candidate's function(s) on every test case. Per-test pass/fail is
/// recorded in the payload; the outcome is an error if any test raised.
pub fn execute_function_tests(
    program: &str,
    tests: &[TestCase],
    limits: &ExecutionLimits,
    runner: &mut dyn ScriptRunner,
) -> ExecutionOutcome {
    let start = Instant::now();
    let req = request(RunnerOp::Tests, program, tests, limits, runner.seed());
    let resp = runner.call(&req, limits.timeout + RUNNER_GRACE);
    let elapsed = start.elapsed();
    let resp = match resp {
        Ok(r) => r,
        Err(f) => return fault_outcome(f, elapsed),
    };
    if resp.status == ExecutionStatus::Timeout {
        return ExecutionOutcome::timeout(elapsed);
    }
    let per_test = match resp.per_test {
        Some(p) => p,
        None if resp.status == ExecutionStatus::Error => {
            return ExecutionOutcome::error(
                resp.error.as_deref().unwrap_or("unknown error"),
                Payload::None,
                elapsed,
            )
        }
        None => return fault_outcome(RunnerFault::Protocol("missing per_test".into()), elapsed),
    };
    if per_test.len() != tests.len() {
        return fault_outcome(RunnerFault::Protocol("per_test length mismatch".into()), elapsed);
    }
    let entries: Vec<String> = per_test.iter().map(test_repr).collect();
    let results: Vec<TestResult> = per_test
        .iter()
        .map(|t| TestResult {
            status: t.status,
            result_type: t.result_type.clone(),
            result_value: t.result_value.clone(),
            passed: t.passed && t.status.is_success(),
        })
        .collect();
    let payload = Payload::Tests { results };
    let joined = entries.join(ROW_SEP);
    match per_test.iter().position(|t| !t.status.is_success()) {
        None => ExecutionOutcome::success(cap_bytes(joined, limits.max_result_bytes), payload, elapsed),
        Some(i) => ExecutionOutcome::error_repr(
            cap_bytes(
                format!("{ERROR_PREFIX}in test {}{ROW_SEP}{joined}", i + 1),
                limits.max_result_bytes,
            ),
            payload,
            elapsed,
        ),
    }
}
