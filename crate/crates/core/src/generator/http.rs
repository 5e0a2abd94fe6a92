use std::time::Duration;

use serde::Deserialize;

use super::{Completion, CompletionRequest, GeneratorEndpoint, GeneratorError};

/// Exponential backoff: `attempts` tries, sleeping `base_delay * 2^i` between.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    /// Runs `op` until it succeeds, returns a non-retryable error, or the
    /// attempts are used up.
    pub fn run<T>(
        &self,
        mut op: impl FnMut() -> Result<T, Attempt>,
    ) -> Result<T, GeneratorError> {
        let attempts = self.attempts.max(1);
        let mut last = String::new();
        for i in 0..attempts {
            match op() {
                Ok(v) => return Ok(v),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => last = msg,
            }
            if i + 1 < attempts {
                std::thread::sleep(self.base_delay * 2u32.pow(i));
            }
        }
        Err(GeneratorError::Transport {
            attempts,
            message: last,
        })
    }
}

pub enum Attempt {
    Retry(String),
    Fatal(GeneratorError),
}

/// Classifies a ureq error: transport failures, 429 and 5xx are retried.
pub(crate) fn classify(err: ureq::Error) -> Attempt {
    match err {
        ureq::Error::Status(status, resp) if status == 429 || status >= 500 => {
            Attempt::Retry(format!("status {status}: {}", resp.into_string().unwrap_or_default()))
        }
        ureq::Error::Status(status, resp) => Attempt::Fatal(GeneratorError::Status {
            status,
            body: resp.into_string().unwrap_or_default(),
        }),
        ureq::Error::Transport(t) => Attempt::Retry(t.to_string()),
    }
}

/// Client for an OpenAI-completions-compatible HTTP endpoint.
#[derive(Debug, Clone)]
pub struct HttpEndpoint {
    url: String,
    api_key: Option<String>,
    model: Option<String>,
    retry: RetryPolicy,
    agent: ureq::Agent,
}

impl HttpEndpoint {
    pub fn new(url: impl Into<String>) -> Self {
        HttpEndpoint {
            url: url.into(),
            api_key: None,
            model: None,
            retry: RetryPolicy::default(),
            agent: ureq::AgentBuilder::new()
                .timeout(Duration::from_secs(120))
                .build(),
        }
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    pub fn with_model(mut self, model: Option<String>) -> Self {
        self.model = model;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.agent = ureq::AgentBuilder::new().timeout(timeout).build();
        self
    }
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    text: String,
    #[serde(default)]
    index: Option<usize>,
    #[serde(default)]
    logprobs: Option<ChoiceLogprobs>,
}

#[derive(Deserialize)]
struct ChoiceLogprobs {
    #[serde(default)]
    token_logprobs: Option<Vec<Option<f64>>>,
}

impl GeneratorEndpoint for HttpEndpoint {
    fn complete(&self, request: &CompletionRequest) -> Result<Vec<Completion>, GeneratorError> {
        let mut body = serde_json::to_value(request).expect("requests serialize");
        if let Some(model) = &self.model {
            body["model"] = serde_json::Value::String(model.clone());
        }
        let response: CompletionResponse = self.retry.run(|| {
            let mut req = self.agent.post(&self.url);
            if let Some(key) = &self.api_key {
                req = req.set("Authorization", &format!("Bearer {key}"));
            }
            let resp = req.send_json(body.clone()).map_err(classify)?;
            resp.into_json()
                .map_err(|e| Attempt::Fatal(GeneratorError::Response(e.to_string())))
        })?;
        let mut choices = response.choices;
        choices.sort_by_key(|c| c.index.unwrap_or(usize::MAX));
        Ok(choices
            .into_iter()
            .map(|c| Completion {
                text: c.text,
                token_logprobs: c
                    .logprobs
                    .and_then(|l| l.token_logprobs)
                    .and_then(|v| v.into_iter().collect::<Option<Vec<f64>>>()),
            })
            .collect())
    }
}
