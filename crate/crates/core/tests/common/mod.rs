#![allow(dead_code)]

use std::time::Duration;

use lever_core::eval::LabeledTask;
use lever_core::execution::{ExecutionOutcome, Payload};
use lever_core::generator::{CandidateSource, ProgramCandidate};
use lever_core::repr::VerificationLabel;
use lever_core::rerank::{RerankConfig, ScoredCandidate};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Shape of a random scored corpus.
#[derive(Clone, Copy)]
pub struct CorpusShape {
    pub tasks: usize,
    pub max_candidates: usize,
    pub max_results: usize,
    /// Round log-probs to this many distinct values to force ties.
    pub logprob_levels: Option<u32>,
}

impl Default for CorpusShape {
    fn default() -> Self {
        CorpusShape {
            tasks: 200,
            max_candidates: 12,
            max_results: 5,
            logprob_levels: None,
        }
    }
}

/// Random labeled corpus. Each task draws a few distinct results (some
/// errors), labels each result, and assigns candidates to results, so labels
/// are consistent within an equivalence class. Verifier probabilities are
/// produced by `verifier(label, rng)`.
pub fn random_corpus(
    seed: u64,
    shape: CorpusShape,
    config: &RerankConfig,
    mut verifier: impl FnMut(VerificationLabel, &mut ChaCha8Rng) -> f64,
) -> Vec<LabeledTask> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..shape.tasks)
        .map(|t| {
            let results: Vec<(ExecutionOutcome, VerificationLabel)> = (0..rng.gen_range(1..=shape.max_results))
                .map(|r| {
                    if rng.gen_bool(0.25) {
                        let o = ExecutionOutcome::error(&format!("failure {r}"), Payload::None, Duration::ZERO);
                        (o, VerificationLabel::Incorrect)
                    } else {
                        let o = ExecutionOutcome::success(format!("{}", r * 7 + 1), Payload::None, Duration::ZERO);
                        (o, rng.gen_bool(0.3).into())
                    }
                })
                .collect();
            let n = rng.gen_range(1..=shape.max_candidates);
            let greedy_at = if rng.gen_bool(0.9) { Some(rng.gen_range(0..n)) } else { None };
            let mut scored = Vec::with_capacity(n);
            let mut labels = Vec::with_capacity(n);
            for c in 0..n {
                let (outcome, label) = results[rng.gen_range(0..results.len())].clone();
                let mut lp: f64 = rng.gen_range(-30.0..-0.1);
                if let Some(levels) = shape.logprob_levels {
                    lp = -((rng.gen_range(0..levels) + 1) as f64);
                }
                let cand = ProgramCandidate {
                    program_text: format!("program {t}.{c}"),
                    cumulative_logprob: lp,
                    token_count: rng.gen_range(1..40),
                    duplicate_count: rng.gen_range(1..4),
                    source: if greedy_at == Some(c) {
                        CandidateSource::Greedy
                    } else {
                        CandidateSource::Sampled
                    },
                };
                let p = verifier(label, &mut rng);
                scored.push(ScoredCandidate::new(cand, outcome, p, config));
                labels.push(label);
            }
            LabeledTask {
                task_id: format!("task-{t}"),
                scored,
                labels,
            }
        })
        .collect()
}

pub fn uniform_verifier(_: VerificationLabel, rng: &mut ChaCha8Rng) -> f64 {
    rng.gen_range(0.0..1.0)
}

/// Scripted HTTP server: answers the i-th request with `responses[i]`
/// (status, body); with `hold` set, requests past the script are held open
/// for that long without an answer. Returns the base URL and the log of
/// received request bodies.
pub type RequestLog = std::sync::Arc<std::sync::Mutex<Vec<String>>>;

pub fn serve(responses: Vec<(u16, String)>, hold: Option<Duration>) -> (String, RequestLog) {
    let server = tiny_http::Server::http("127.0.0.1:0").expect("bind mock server");
    let port = server.server_addr().to_ip().expect("ip listener").port();
    let log = std::sync::Arc::new(std::sync::Mutex::new(Vec::new()));
    let seen = log.clone();
    std::thread::spawn(move || {
        for (i, mut request) in server.incoming_requests().enumerate() {
            let mut body = String::new();
            let _ = request.as_reader().read_to_string(&mut body);
            seen.lock().unwrap().push(body);
            match responses.get(i) {
                Some((status, text)) => {
                    let resp = tiny_http::Response::from_string(text.clone())
                        .with_status_code(*status)
                        .with_header(
                            "Content-Type: application/json"
                                .parse::<tiny_http::Header>()
                                .unwrap(),
                        );
                    let _ = request.respond(resp);
                }
                None => {
                    if let Some(d) = hold {
                        std::thread::spawn(move || {
                            std::thread::sleep(d);
                            drop(request);
                        });
                    }
                }
            }
        }
    });
    (format!("http://127.0.0.1:{port}/v1/completions"), log)
}
