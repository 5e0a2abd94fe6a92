//! Joint scoring, execution-result aggregation and output selection.
//!
//! A candidate's reranking score is `P_LM(y|x) * P(v=1|x,y,E(y))`, kept in
//! log space. With aggregation on, candidates that execute to the same
//! result pool their scores and the best pool wins; a representative program
//! is drawn uniformly from it. The baselines and the oracle live here too so
//! every strategy shares the same tie-breaking.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::execution::ExecutionOutcome;
use crate::generator::{CandidateSource, ProgramCandidate};
use crate::repr::{EquivalenceKey, VerificationLabel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RerankConfig {
    /// Divide the cumulative log-probability by the token count.
    pub normalize_logprob: bool,
    /// Floor applied to verifier probabilities before taking the log.
    pub epsilon: f64,
}

impl Default for RerankConfig {
    fn default() -> Self {
        RerankConfig {
            normalize_logprob: false,
            epsilon: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub candidate: ProgramCandidate,
    pub outcome: ExecutionOutcome,
    pub verifier_prob: f64,
    pub gen_log_term: f64,
    pub joint_log_score: f64,
}

impl ScoredCandidate {
    pub fn new(
        candidate: ProgramCandidate,
        outcome: ExecutionOutcome,
        verifier_prob: f64,
        config: &RerankConfig,
    ) -> Self {
        let gen_log_term = candidate.generation_log_term(config.normalize_logprob);
        let joint_log_score = joint_log_score(gen_log_term, verifier_prob, config.epsilon);
        ScoredCandidate {
            candidate,
            outcome,
            verifier_prob,
            gen_log_term,
            joint_log_score,
        }
    }
}

/// `gen_log_term + ln(max(p, epsilon))`. With `epsilon = 0` a zero
/// probability yields negative infinity.
pub fn joint_log_score(gen_log_term: f64, verifier_prob: f64, epsilon: f64) -> f64 {
    gen_log_term + verifier_prob.max(epsilon).ln()
}

/// `ln(sum(exp(x)))`, stable for widely spread inputs.
pub fn log_sum_exp(values: impl IntoIterator<Item = f64>) -> f64 {
    let values: Vec<f64> = values.into_iter().collect();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Per-task selection seed derived from the run seed and the task id, so a
/// task's tie-breaks do not depend on corpus order.
pub fn task_seed(seed: u64, task_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(task_id.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Index of the maximum; ties are broken uniformly with `rng`.
fn seeded_argmax(values: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<usize> = (0..values.len()).filter(|&i| values[i] == max).collect();
    match tied.len() {
        0 => 0,
        1 => tied[0],
        n => tied[rng.gen_range(0..n)],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedGroup {
    pub key: EquivalenceKey,
    /// `ln R`, the log of the aggregated score.
    pub log_score: f64,
    /// `R`, the sum of member joint scores.
    pub score: f64,
    /// Indices into the scored candidate list.
    pub members: Vec<usize>,
    pub representative: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedOutput {
    /// Sorted by descending score; the first group holds the selection.
    pub groups: Vec<RankedGroup>,
    pub selected: usize,
    pub selection_seed: u64,
}

/// Ranks candidates by (optionally aggregated) joint score and selects the
/// representative of the best group.
///
/// # Panics
/// If `scored` is empty.
pub fn rerank_lever(scored: &[ScoredCandidate], aggregate: bool, seed: u64) -> RankedOutput {
    assert!(!scored.is_empty(), "nothing to rerank");
    let mut members: Vec<Vec<usize>> = Vec::new();
    if aggregate {
        let mut index: HashMap<&EquivalenceKey, usize> = HashMap::new();
        for (i, s) in scored.iter().enumerate() {
            let slot = *index.entry(&s.outcome.equivalence_key).or_insert_with(|| {
                members.push(Vec::new());
                members.len() - 1
            });
            members[slot].push(i);
        }
    } else {
        members = (0..scored.len()).map(|i| vec![i]).collect();
    }

    let log_scores: Vec<f64> = members
        .iter()
        .map(|m| log_sum_exp(m.iter().map(|&i| scored[i].joint_log_score)))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let best = seeded_argmax(&log_scores, &mut rng);
    let mut groups: Vec<RankedGroup> = members
        .into_iter()
        .zip(&log_scores)
        .enumerate()
        .map(|(g, (m, &log_score))| {
            let representative = if g == best {
                m[rng.gen_range(0..m.len())]
            } else {
                m[0]
            };
            RankedGroup {
                key: scored[m[0]].outcome.equivalence_key.clone(),
                log_score,
                score: log_score.exp(),
                members: m,
                representative,
            }
        })
        .collect();
    let winner = groups.remove(best);
    groups.sort_by(|a, b| b.log_score.total_cmp(&a.log_score));
    groups.insert(0, winner);
    RankedOutput {
        selected: groups[0].representative,
        groups,
        selection_seed: seed,
    }
}

/// Highest generation log-term; ties broken by `seed`.
///
/// # Panics
/// If `scored` is empty.
pub fn baseline_ml(scored: &[ScoredCandidate], seed: u64) -> usize {
    assert!(!scored.is_empty(), "nothing to select");
    let terms: Vec<f64> = scored.iter().map(|s| s.gen_log_term).collect();
    seeded_argmax(&terms, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Maximum likelihood over candidates that executed successfully, or over
/// all candidates when none did.
pub fn baseline_ep_ml(scored: &[ScoredCandidate], seed: u64) -> usize {
    let ok: Vec<usize> = (0..scored.len())
        .filter(|&i| scored[i].outcome.status.is_success())
        .collect();
    if ok.is_empty() {
        return baseline_ml(scored, seed);
    }
    let terms: Vec<f64> = ok.iter().map(|&i| scored[i].gen_log_term).collect();
    ok[seeded_argmax(&terms, &mut ChaCha8Rng::seed_from_u64(seed))]
}

/// Vote tally of one execution result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteTally {
    pub key: EquivalenceKey,
    pub votes: u64,
    pub members: Vec<usize>,
}

/// Successful candidates grouped by result, each weighted by its duplicate
/// count, in first-appearance order.
pub fn tally_votes(scored: &[ScoredCandidate]) -> Vec<VoteTally> {
    let mut tallies: Vec<VoteTally> = Vec::new();
    let mut index: HashMap<&EquivalenceKey, usize> = HashMap::new();
    for (i, s) in scored.iter().enumerate() {
        if !s.outcome.status.is_success() {
            continue;
        }
        let slot = *index.entry(&s.outcome.equivalence_key).or_insert_with(|| {
            tallies.push(VoteTally {
                key: s.outcome.equivalence_key.clone(),
                votes: 0,
                members: Vec::new(),
            });
            tallies.len() - 1
        });
        tallies[slot].votes += s.candidate.duplicate_count as u64;
        tallies[slot].members.push(i);
    }
    tallies
}

/// Majority vote over execution results of successful candidates; the
/// winning result is represented by its most likely program.
pub fn baseline_ep_voting(scored: &[ScoredCandidate], seed: u64) -> usize {
    let tallies = tally_votes(scored);
    if tallies.is_empty() {
        return baseline_ep_ml(scored, seed);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let votes: Vec<f64> = tallies.iter().map(|t| t.votes as f64).collect();
    let winner = &tallies[seeded_argmax(&votes, &mut rng)];
    let terms: Vec<f64> = winner
        .members
        .iter()
        .map(|&i| scored[i].gen_log_term)
        .collect();
    winner.members[seeded_argmax(&terms, &mut rng)]
}

/// The greedy-decoded candidate, if the set has one.
pub fn baseline_greedy(scored: &[ScoredCandidate]) -> Option<usize> {
    scored
        .iter()
        .position(|s| s.candidate.source == CandidateSource::Greedy)
}

/// A correct candidate whenever one exists.
pub fn oracle_select(labels: &[VerificationLabel]) -> Option<usize> {
    labels.iter().position(|l| l.is_correct())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Lever,
    Ml,
    EpMl,
    EpVoting,
    Greedy,
    Oracle,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Lever,
        Strategy::Ml,
        Strategy::EpMl,
        Strategy::EpVoting,
        Strategy::Greedy,
        Strategy::Oracle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Lever => "lever",
            Strategy::Ml => "ml",
            Strategy::EpMl => "ep_ml",
            Strategy::EpVoting => "ep_voting",
            Strategy::Greedy => "greedy",
            Strategy::Oracle => "oracle",
        }
    }

    /// Parses a comma-separated list such as `lever,ml,oracle`.
    pub fn parse_list(text: &str) -> Result<Vec<Strategy>, String> {
        let mut out = Vec::new();
        for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let s: Strategy = part.parse()?;
            if !out.contains(&s) {
                out.push(s);
            }
        }
        if out.is_empty() {
            return Err("no strategies given".into());
        }
        Ok(out)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown strategy `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub key: String,
    pub score: f64,
    pub size: usize,
}

/// One line of the reranked-output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankRecord {
    pub task_id: String,
    pub strategy: Strategy,
    pub selected_program: Option<String>,
    pub selected_key: Option<String>,
    pub groups: Vec<GroupSummary>,
    pub seed: u64,
}

/// Applies `strategy` to one task's scored candidates and returns the
/// selected index with the group summaries worth persisting. `labels` is
/// needed by the oracle only.
pub fn choose(
    strategy: Strategy,
    scored: &[ScoredCandidate],
    labels: &[VerificationLabel],
    aggregate: bool,
    seed: u64,
) -> (Option<usize>, Vec<GroupSummary>) {
    if scored.is_empty() {
        return (None, Vec::new());
    }
    match strategy {
        Strategy::Lever => {
            let ranked = rerank_lever(scored, aggregate, seed);
            let groups = ranked
                .groups
                .iter()
                .map(|g| GroupSummary {
                    key: g.key.to_string(),
                    score: g.score,
                    size: g.members.len(),
                })
                .collect();
            (Some(ranked.selected), groups)
        }
        Strategy::Ml => (Some(baseline_ml(scored, seed)), Vec::new()),
        Strategy::EpMl => (Some(baseline_ep_ml(scored, seed)), Vec::new()),
        Strategy::EpVoting => {
            let groups = tally_votes(scored)
                .into_iter()
                .map(|t| GroupSummary {
                    key: t.key.to_string(),
                    score: t.votes as f64,
                    size: t.members.len(),
                })
                .collect();
            (Some(baseline_ep_voting(scored, seed)), groups)
        }
        Strategy::Greedy => (baseline_greedy(scored), Vec::new()),
        Strategy::Oracle => (oracle_select(labels), Vec::new()),
    }
}

/// [`choose`], packaged as a reranked-output record.
pub fn select(
    task_id: &str,
    strategy: Strategy,
    scored: &[ScoredCandidate],
    labels: &[VerificationLabel],
    aggregate: bool,
    seed: u64,
) -> RerankRecord {
    let (selected, groups) = choose(strategy, scored, labels, aggregate, seed);
    RerankRecord {
        task_id: task_id.to_string(),
        strategy,
        selected_program: selected.map(|i| scored[i].candidate.program_text.clone()),
        selected_key: selected.map(|i| scored[i].outcome.equivalence_key.to_string()),
        groups,
        seed,
    }
}
