//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

mod common;

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use lever_core::dataset::{Column, DatabaseBundle, Table};
use lever_core::eval::EvaluationReport;
use lever_core::execution::{execute_sql, ExecutionLimits, ExecutionStatus};
use lever_core::generator::CandidateSource;
use lever_core::pipeline::{write_synthetic_experiment, Pipeline, PipelineConfig};
use lever_core::rerank::{baseline_ml, rerank_lever, task_seed, RerankConfig, Strategy};
use lever_core::verifier::{loss_and_gradient, CandidateMeta, VerificationExample, VerifierModel, DIMENSION};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use common::{random_corpus, uniform_verifier, CorpusShape};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn oracle_dominance() -> Outcome {
    let start = Instant::now();
    let mut corpora = 0;
    for seed in 0..20 {
        let config = RerankConfig::default();
        let corpus = random_corpus(seed, CorpusShape::default(), &config, uniform_verifier);
        for aggregate in [true, false] {
            let report = EvaluationReport::evaluate(&corpus, &Strategy::ALL, aggregate, seed, "acceptance")
                .map_err(|e| e.to_string())?;
            let oracle = report.accuracy(Strategy::Oracle).unwrap();
            for a in &report.accuracies {
                check(a.accuracy <= oracle, || {
                    format!("corpus {seed}: {} {} > oracle {oracle}", a.strategy, a.accuracy)
                })?;
            }
            corpora += 1;
        }
    }
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("{corpora} corpora x 200 tasks in {:.2}s", elapsed.as_secs_f64()))
}

fn perfect_verifier_recovery() -> Outcome {
    let config = RerankConfig {
        normalize_logprob: false,
        epsilon: 0.0,
    };
    for seed in 0..50 {
        let corpus = random_corpus(seed, CorpusShape::default(), &config, |l, _| l.as_f64());
        let report = EvaluationReport::evaluate(&corpus, &[Strategy::Lever, Strategy::Oracle], true, seed, "")
            .map_err(|e| e.to_string())?;
        let (lever, oracle) = (report.accuracies[0].correct, report.accuracies[1].correct);
        check(lever == oracle, || format!("corpus {seed}: lever {lever} != oracle {oracle}"))?;
    }
    Ok("50 corpora, lever == oracle".into())
}

fn uniform_verifier_reduction() -> Outcome {
    let config = RerankConfig::default();
    let shape = CorpusShape {
        logprob_levels: Some(3),
        ..CorpusShape::default()
    };
    let mut tie_tasks = 0;
    for seed in 0..100 {
        let corpus = random_corpus(seed, shape, &config, |_, _| 1.0);
        for t in &corpus {
            let s = task_seed(seed, &t.task_id);
            let lever = rerank_lever(&t.scored, false, s).selected;
            let ml = baseline_ml(&t.scored, s);
            check(lever == ml, || format!("corpus {seed} {}: lever {lever} ml {ml}", t.task_id))?;
            let best = t.scored.iter().map(|c| c.gen_log_term).fold(f64::NEG_INFINITY, f64::max);
            tie_tasks += (t.scored.iter().filter(|c| c.gen_log_term == best).count() > 1) as usize;
        }
    }
    check(tie_tasks > 0, || "no ties exercised".into())?;
    Ok(format!("100 corpora identical, {tie_tasks} tasks with tied maxima"))
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for draw in 0..100 {
        let mut model = VerifierModel::zeros(DIMENSION);
        model.weights = (0..DIMENSION).map(|_| rng.gen_range(-0.5..0.5)).collect();
        model.bias = rng.gen_range(-1.0..1.0);
        let n = rng.gen_range(1..=10);
        let group: Vec<VerificationExample> = (0..n)
            .map(|_| VerificationExample {
                task_id: "g".into(),
                input_text: String::new(),
                program_text: String::new(),
                result_text: String::new(),
                status: ExecutionStatus::Success,
                label: rng.gen_bool(0.5).into(),
                meta: CandidateMeta {
                    cumulative_logprob: -1.0,
                    token_count: 1,
                    duplicate_count: 1,
                    source: CandidateSource::Sampled,
                },
                features: (0..DIMENSION).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            })
            .collect();
        let refs: Vec<&VerificationExample> = group.iter().collect();
        let (_, grad) = loss_and_gradient(&model, &refs);
        let loss_at = |m: &VerifierModel| loss_and_gradient(m, &refs).0;
        let mut analytic = grad.weights.clone();
        analytic.push(grad.bias);
        let mut numeric = Vec::with_capacity(DIMENSION + 1);
        for i in 0..=DIMENSION {
            let mut plus = model.clone();
            let mut minus = model.clone();
            if i < DIMENSION {
                plus.weights[i] += h;
                minus.weights[i] -= h;
            } else {
                plus.bias += h;
                minus.bias -= h;
            }
            numeric.push((loss_at(&plus) - loss_at(&minus)) / (2.0 * h));
        }
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let rel = diff / (norm(&analytic) + norm(&numeric)).max(1e-300);
        worst = worst.max(rel);
        check(rel <= 1e-6, || format!("draw {draw}: relative error {rel:e}"))?;
    }
    Ok(format!("100 draws, worst relative error {worst:.2e}"))
}

fn aggregation_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..1000u64 {
        let shape = CorpusShape {
            tasks: 1,
            max_candidates: 30,
            max_results: 6,
            logprob_levels: None,
        };
        let config = RerankConfig::default();
        let task = &random_corpus(seed, shape, &config, uniform_verifier)[0];
        let ranked = rerank_lever(&task.scored, true, seed);
        let mut brute: HashMap<String, f64> = HashMap::new();
        for s in &task.scored {
            *brute.entry(s.outcome.equivalence_key.to_string()).or_default() += s.joint_log_score.exp();
        }
        check(ranked.groups.len() == brute.len(), || format!("set {seed}: group count"))?;
        for g in &ranked.groups {
            let err = (g.score - brute[g.key.as_str()]).abs();
            worst = worst.max(err);
            check(err <= 1e-12, || format!("set {seed}: |{} - {}| = {err:e}", g.score, brute[g.key.as_str()]))?;
        }
    }
    Ok(format!("1000 sets, worst abs error {worst:.2e}"))
}

fn run_experiment(dir: &Path, seed: u64, use_gold: bool, work: &str) -> Result<EvaluationReport, String> {
    let path = dir.join("lever.toml");
    if !path.exists() {
        write_synthetic_experiment(dir, 500, 200, seed).map_err(|e| e.to_string())?;
    }
    let mut config = PipelineConfig::load(&path).map_err(|e| e.to_string())?;
    config.verifier.use_gold_programs = use_gold;
    config.run.work_dir = work.into();
    config.execution.parallelism = 1;
    Pipeline::new(config)
        .and_then(|mut p| p.run())
        .map_err(|e| e.to_string())
}

fn synthetic_end_to_end() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let start = Instant::now();
    let report = run_experiment(dir.path(), 0, true, "work")?;
    let elapsed = start.elapsed();
    let acc = |s| report.accuracy(s).unwrap();
    let (lever, ep_ml, ml, oracle) = (acc(Strategy::Lever), acc(Strategy::EpMl), acc(Strategy::Ml), acc(Strategy::Oracle));
    let detail = format!(
        "lever {:.1}% ep_ml {:.1}% ml {:.1}% oracle {:.1}% in {:.1}s",
        100.0 * lever,
        100.0 * ep_ml,
        100.0 * ml,
        100.0 * oracle,
        elapsed.as_secs_f64()
    );
    check(lever >= ep_ml + 0.05, || format!("lever < ep_ml + 5: {detail}"))?;
    check(ep_ml >= ml, || format!("ep_ml < ml: {detail}"))?;
    check(elapsed < Duration::from_secs(120), || format!("too slow: {detail}"))?;
    Ok(detail)
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    for dir in [a.path(), b.path()] {
        let path = write_synthetic_experiment(dir, 60, 40, 9).map_err(|e| e.to_string())?;
        let config = PipelineConfig::load(&path).map_err(|e| e.to_string())?;
        Pipeline::new(config).and_then(|mut p| p.run()).map_err(|e| e.to_string())?;
    }
    for file in ["work/report.json", "work/report.txt", "work/eval/reranked.jsonl"] {
        let x = std::fs::read(a.path().join(file)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.path().join(file)).map_err(|e| e.to_string())?;
        check(x == y, || format!("{file} differs"))?;
    }
    Ok("report.json, report.txt and reranked.jsonl byte-identical".into())
}

fn golden_db() -> DatabaseBundle {
    let col = |n: &str, t: &str| Column {
        name: n.into(),
        ty: t.into(),
    };
    DatabaseBundle {
        tables: vec![
            Table {
                name: "singer".into(),
                columns: vec![col("singer_id", "int"), col("name", "text"), col("country", "text"), col("age", "int")],
                rows: vec![
                    vec![json!(1), json!("Joe Sharp"), json!("Netherlands"), json!(52)],
                    vec![json!(2), json!("Timbaland"), json!("United States"), json!(32)],
                    vec![json!(3), json!("Justin Brown"), json!("France"), json!(29)],
                    vec![json!(4), json!("Rose White"), json!("France"), json!(41)],
                    vec![json!(5), json!("John Nizinik"), json!("France"), json!(43)],
                    vec![json!(6), json!("Tribal King"), json!("France"), json!(25)],
                ],
            },
            Table {
                name: "concert".into(),
                columns: vec![col("concert_id", "int"), col("singer_id", "int"), col("year", "int"), col("venue", "text")],
                rows: vec![
                    vec![json!(1), json!(1), json!(2014), json!("Stadium")],
                    vec![json!(2), json!(2), json!(2015), json!("Hall")],
                    vec![json!(3), json!(2), json!(2014), json!("Arena")],
                    vec![json!(4), json!(5), json!(2015), json!("Stadium")],
                ],
            },
        ],
    }
}

fn sql_goldens() -> Outcome {
    let mut long = String::from("col: x");
    for i in 1..=64 {
        long.push_str(&format!(" || row{i}: {i}"));
    }
    long.push_str(" || ... (truncated)");
    let cases: Vec<(&str, String)> = vec![
        ("SELECT count(*) FROM singer", "6".into()),
        ("SELECT name FROM singer WHERE age > 100", "empty table".into()),
        ("SELECT * FROM singers", "ERROR: no such table: singers".into()),
        (
            "SELECT name, age FROM singer WHERE country = 'France' ORDER BY age",
            "col: name | age || row1: Tribal King | 25 || row2: Justin Brown | 29 || row3: Rose White | 41 || row4: John Nizinik | 43".into(),
        ),
        ("SELECT avg(age) FROM singer", "37".into()),
        ("SELECT avg(age) FROM singer WHERE country = 'France'", "34.5".into()),
        (
            "SELECT country, count(*) FROM singer GROUP BY country",
            "col: country | count(*) || row1: France | 4 || row2: Netherlands | 1 || row3: United States | 1".into(),
        ),
        ("SELECT name FROM singer ORDER BY age DESC LIMIT 1", "Joe Sharp".into()),
        ("SELECT nme FROM singer", "ERROR: no such column: nme".into()),
        (
            "SELECT s.name, c.year FROM singer s JOIN concert c ON s.singer_id = c.singer_id WHERE c.venue = 'Stadium' ORDER BY c.year",
            "col: name | year || row1: Joe Sharp | 2014 || row2: John Nizinik | 2015".into(),
        ),
        ("SELECT 1.0 / 3", "0.333333".into()),
        ("SELECT NULL", "null".into()),
        ("SELECT count(*) FROM concert;", "4".into()),
        (
            "WITH RECURSIVE c(x) AS (SELECT 1 UNION ALL SELECT x + 1 FROM c WHERE x < 70) SELECT x FROM c ORDER BY x",
            long,
        ),
        ("SELECT DISTINCT venue FROM concert", "col: venue || row1: Arena || row2: Hall || row3: Stadium".into()),
        ("SELECT count(DISTINCT singer_id) FROM concert", "3".into()),
        ("SELEC name FROM singer", "ERROR: near \"SELEC\": syntax error".into()),
        (
            "SELECT name FROM singer WHERE singer_id IN (SELECT singer_id FROM concert WHERE year = 2015) ORDER BY name",
            "col: name || row1: John Nizinik || row2: Timbaland".into(),
        ),
        ("SELECT 'a   b'", "a b".into()),
        ("SELECT sum(age) * 2.5 FROM singer", "555".into()),
    ];
    let db = golden_db();
    let limits = ExecutionLimits::default();
    for (query, expected) in &cases {
        let got = execute_sql(query, &db, &limits).canonical_repr;
        check(&got == expected, || format!("{query}\n    expected {expected:?}\n    got      {got:?}"))?;
    }
    Ok(format!("{} goldens", cases.len()))
}

fn weak_supervision_parity() -> Outcome {
    let mut deltas = Vec::new();
    for seed in 0..3 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let full = run_experiment(dir.path(), seed, true, "work_full")?;
        let weak = run_experiment(dir.path(), seed, false, "work_weak")?;
        let correct = |r: &EvaluationReport| {
            r.accuracies.iter().find(|a| a.strategy == Strategy::Lever).unwrap().correct as i64
        };
        let delta = correct(&weak) - correct(&full);
        // 2 points of 200 tasks, compared in whole tasks.
        check(delta.abs() * 100 <= 2 * full.task_count as i64, || {
            format!("seed {seed}: weak {} vs full {}", correct(&weak), correct(&full))
        })?;
        deltas.push(format!("{:+.1}", 100.0 * delta as f64 / full.task_count as f64));
    }
    Ok(format!("weak - full per seed: {} points", deltas.join(", ")))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("oracle dominance", oracle_dominance),
        ("perfect-verifier recovery", perfect_verifier_recovery),
        ("uniform-verifier reduction", uniform_verifier_reduction),
        ("gradient check", gradient_check),
        ("aggregation oracle", aggregation_oracle),
        ("synthetic end-to-end", synthetic_end_to_end),
        ("determinism", determinism),
        ("sql executor goldens", sql_goldens),
        ("weak-supervision parity", weak_supervision_parity),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(msg)
        });
        match result {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
