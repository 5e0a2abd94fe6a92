//! In-process endpoints for tests and offline experiments.

use std::sync::Mutex;

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Completion, CompletionRequest, GeneratorEndpoint, GeneratorError};

/// Replays a fixed list of completions cyclically and records every request.
#[derive(Debug)]
pub struct ScriptedEndpoint {
    script: Vec<Completion>,
    cursor: Mutex<usize>,
    requests: Mutex<Vec<CompletionRequest>>,
}

impl ScriptedEndpoint {
    pub fn new(script: Vec<Completion>) -> Self {
        ScriptedEndpoint {
            script,
            cursor: Mutex::new(0),
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn requests(&self) -> Vec<CompletionRequest> {
        self.requests.lock().unwrap().clone()
    }
}

impl GeneratorEndpoint for ScriptedEndpoint {
    fn complete(&self, request: &CompletionRequest) -> Result<Vec<Completion>, GeneratorError> {
        self.requests.lock().unwrap().push(request.clone());
        if self.script.is_empty() {
            return Ok(Vec::new());
        }
        let mut cursor = self.cursor.lock().unwrap();
        let out = (0..request.n)
            .map(|_| {
                let c = self.script[*cursor % self.script.len()].clone();
                *cursor += 1;
                c
            })
            .collect();
        Ok(out)
    }
}

/// A toy language model over a fixed program vocabulary: each program has a
/// per-token log-probability list, and sampling draws programs with weight
/// `exp(cumulative_logprob / T)`. Temperature 0 returns the argmax program.
#[derive(Debug)]
pub struct SeededMockEndpoint {
    programs: Vec<(String, Vec<f64>)>,
    rng: Mutex<ChaCha8Rng>,
}

impl SeededMockEndpoint {
    pub fn new(programs: Vec<(String, Vec<f64>)>, seed: u64) -> Self {
        assert!(!programs.is_empty(), "mock endpoint needs at least one program");
        SeededMockEndpoint {
            programs,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    fn completion(&self, i: usize) -> Completion {
        let (text, lps) = &self.programs[i];
        Completion {
            text: text.clone(),
            token_logprobs: Some(lps.clone()),
        }
    }
}

impl GeneratorEndpoint for SeededMockEndpoint {
    fn complete(&self, request: &CompletionRequest) -> Result<Vec<Completion>, GeneratorError> {
        let scores: Vec<f64> = self
            .programs
            .iter()
            .map(|(_, lps)| lps.iter().sum::<f64>())
            .collect();
        if request.temperature <= 0.0 {
            let best = scores
                .iter()
                .enumerate()
                .fold(0, |b, (i, s)| if *s > scores[b] { i } else { b });
            return Ok(vec![self.completion(best)]);
        }
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = scores
            .iter()
            .map(|s| ((s - max) / request.temperature).exp())
            .collect();
        let dist = WeightedIndex::new(&weights)
            .map_err(|e| GeneratorError::Response(e.to_string()))?;
        let mut rng = self.rng.lock().unwrap();
        Ok((0..request.n)
            .map(|_| self.completion(dist.sample(&mut *rng)))
            .collect())
    }
}
