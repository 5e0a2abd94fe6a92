use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{VerificationExample, VerifierError};
use crate::generator::{Attempt, RetryPolicy};

#[derive(Serialize)]
struct ScoreRequest<'a> {
    task_id: &'a str,
    input: &'a str,
    program: &'a str,
    result: &'a str,
}

#[derive(Deserialize)]
struct ScoreResponse {
    probability: f64,
}

/// Verifier backed by an HTTP endpoint that returns `{"probability": p}`.
#[derive(Debug, Clone)]
pub struct RemoteScorer {
    url: String,
    retry: RetryPolicy,
    agent: ureq::Agent,
}

impl RemoteScorer {
    pub fn new(url: impl Into<String>) -> Self {
        RemoteScorer {
            url: url.into(),
            retry: RetryPolicy::default(),
            agent: ureq::AgentBuilder::new()
                .timeout(Duration::from_secs(30))
                .build(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.agent = ureq::AgentBuilder::new().timeout(timeout).build();
        self
    }

    pub fn remote_score(&self, example: &VerificationExample) -> Result<f64, VerifierError> {
        let body = ScoreRequest {
            task_id: &example.task_id,
            input: &example.input_text,
            program: &example.program_text,
            result: &example.result_text,
        };
        let response: ScoreResponse = self
            .retry
            .run(|| {
                let resp = self
                    .agent
                    .post(&self.url)
                    .send_json(&body)
                    .map_err(crate::generator::classify)?;
                resp.into_json().map_err(|e| {
                    Attempt::Fatal(crate::generator::GeneratorError::Response(e.to_string()))
                })
            })
            .map_err(|e| VerifierError::Remote(e.to_string()))?;
        let p = response.probability;
        if !(0.0..=1.0).contains(&p) {
            return Err(VerifierError::OutOfRange(p));
        }
        Ok(p)
    }
}
