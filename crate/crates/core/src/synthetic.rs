//! Synthetic text-to-SQL corpus with a controlled candidate mix.
//!
//! Every task asks one question about a small random `people` table. Each
//! task owns a fixed pool of program variants in four classes: correct
//! (several spellings of the gold query), execution errors, wrong results of
//! the wrong type, and wrong results of the right type. Every variant gets a
//! fixed per-token log-probability vector, so repeated draws of the same
//! text agree. Samples are drawn class-first, then uniformly within a class.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dataset::{Column, DatabaseBundle, DatasetKind, ExecutionContext, Table, TaskInstance};
use crate::execution::{execute_sql, ExecutionLimits};
use crate::generator::RawSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub tasks: usize,
    pub samples_per_task: usize,
    /// Probability that a sample is a correct program.
    pub p_correct: f64,
    /// Share of distractors that fail to execute.
    pub p_error: f64,
    /// Share of the remaining distractors whose result has the wrong type.
    pub p_type_mismatch: f64,
    pub seed: u64,
    pub id_prefix: String,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            tasks: 100,
            samples_per_task: 20,
            p_correct: 0.3,
            p_error: 0.25,
            p_type_mismatch: 0.5,
            seed: 0,
            id_prefix: "synth".into(),
        }
    }
}

/// Class of a synthetic program variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantClass {
    Correct,
    Error,
    TypeMismatch,
    SameTypeWrong,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub tasks: Vec<TaskInstance>,
    /// Sampled programs plus one greedy-flagged program per task.
    pub samples: Vec<RawSample>,
}

const NAMES: [&str; 16] = [
    "Ada Park", "Ben Ortiz", "Cleo Hart", "Dan Moss", "Eva Lund", "Finn Cole", "Gia Rossi", "Hal Weber",
    "Ivy Chen", "Jon Baker", "Kai Doyle", "Lea Novak", "Max Reyes", "Nia Brooks", "Oto Sato", "Pia Ward",
];
const CITIES: [&str; 4] = ["Paris", "Lagos", "Lima", "Oslo"];

struct Person {
    id: i64,
    name: &'static str,
    age: i64,
    city: &'static str,
    salary: i64,
}

fn random_people(rng: &mut ChaCha8Rng) -> Vec<Person> {
    let n = rng.gen_range(6..=10);
    let mut names = NAMES.to_vec();
    names.shuffle(rng);
    // Distinct ages keep "oldest" unambiguous.
    let mut ages: Vec<i64> = (18..80).collect();
    ages.shuffle(rng);
    (0..n)
        .map(|i| Person {
            id: i as i64 + 1,
            name: names[i],
            age: ages[i],
            city: CITIES[rng.gen_range(0..CITIES.len())],
            salary: rng.gen_range(20..120) * 1000,
        })
        .collect()
}

fn bundle(people: &[Person]) -> DatabaseBundle {
    let col = |name: &str, ty: &str| Column {
        name: name.into(),
        ty: ty.into(),
    };
    DatabaseBundle {
        tables: vec![Table {
            name: "people".into(),
            columns: vec![
                col("id", "int"),
                col("name", "text"),
                col("age", "int"),
                col("city", "text"),
                col("salary", "int"),
            ],
            rows: people
                .iter()
                .map(|p| vec![json!(p.id), json!(p.name), json!(p.age), json!(p.city), json!(p.salary)])
                .collect(),
        }],
    }
}

/// Question and the four variant pools of one task.
struct Template {
    question: String,
    correct: Vec<String>,
    error: Vec<String>,
    type_mismatch: Vec<String>,
    same_type: Vec<String>,
}

fn template(rng: &mut ChaCha8Rng, people: &[Person]) -> Template {
    let city = people[rng.gen_range(0..people.len())].city;
    let other = CITIES.iter().copied().find(|c| *c != city).unwrap();
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    match rng.gen_range(0..4) {
        0 => Template {
            question: format!("How many people live in {city}?"),
            correct: s(&[
                &format!("SELECT count(*) FROM people WHERE city = '{city}'"),
                &format!("SELECT count(id) FROM people WHERE city = '{city}'"),
                &format!("SELECT count(name) FROM people WHERE people.city = '{city}'"),
            ]),
            error: s(&[
                &format!("SELECT count(*) FROM person WHERE city = '{city}'"),
                &format!("SELECT count(*) FROM people WHERE town = '{city}'"),
                &format!("SELECT count(*) FROM people WHERE city = {city}"),
            ]),
            type_mismatch: s(&[
                &format!("SELECT name FROM people WHERE city = '{city}'"),
                &format!("SELECT * FROM people WHERE city = '{city}'"),
                &format!("SELECT avg(age) FROM people WHERE city = '{city}'"),
            ]),
            same_type: s(&[
                &format!("SELECT count(*) FROM people WHERE city != '{city}'"),
                "SELECT count(*) FROM people",
                &format!("SELECT count(*) FROM people WHERE city = '{other}'"),
            ]),
        },
        1 => Template {
            question: format!("What is the average age of people in {city}?"),
            correct: s(&[
                &format!("SELECT avg(age) FROM people WHERE city = '{city}'"),
                &format!("SELECT avg(people.age) FROM people WHERE city = '{city}'"),
                &format!("SELECT sum(age) * 1.0 / count(*) FROM people WHERE city = '{city}'"),
            ]),
            error: s(&[
                &format!("SELECT average(age) FROM people WHERE city = '{city}'"),
                &format!("SELECT avg(years) FROM people WHERE city = '{city}'"),
                &format!("SELECT avg(age) FROM people WHERE city = '{city}' GROUP"),
            ]),
            type_mismatch: s(&[
                &format!("SELECT name, age FROM people WHERE city = '{city}'"),
                &format!("SELECT name FROM people WHERE city = '{city}' ORDER BY age LIMIT 1"),
            ]),
            same_type: s(&[
                "SELECT avg(age) FROM people",
                &format!("SELECT avg(salary) FROM people WHERE city = '{city}'"),
                &format!("SELECT max(age) FROM people WHERE city = '{city}'"),
            ]),
        },
        2 => Template {
            question: "What is the name of the oldest person?".to_string(),
            correct: s(&[
                "SELECT name FROM people ORDER BY age DESC LIMIT 1",
                "SELECT name FROM people WHERE age = (SELECT max(age) FROM people)",
                "SELECT people.name FROM people ORDER BY people.age DESC LIMIT 1",
            ]),
            error: s(&[
                "SELECT name FROM people ORDER BY years DESC LIMIT 1",
                "SELECT name FROM persons ORDER BY age DESC LIMIT 1",
                "SELECT name FROM people ORDER age DESC LIMIT 1",
            ]),
            type_mismatch: s(&[
                "SELECT max(age) FROM people",
                "SELECT name, age FROM people ORDER BY age DESC LIMIT 2",
            ]),
            same_type: s(&[
                "SELECT name FROM people ORDER BY age ASC LIMIT 1",
                "SELECT name FROM people ORDER BY salary DESC LIMIT 1",
                "SELECT name FROM people ORDER BY id DESC LIMIT 1",
            ]),
        },
        _ => {
            let mut ages: Vec<i64> = people.iter().map(|p| p.age).collect();
            ages.sort_unstable();
            let n = ages[ages.len() / 2] - 1;
            Template {
                question: format!("What is the total salary of people older than {n}?"),
                correct: s(&[
                    &format!("SELECT sum(salary) FROM people WHERE age > {n}"),
                    &format!("SELECT total(salary) FROM people WHERE age > {n}"),
                    &format!("SELECT sum(people.salary) FROM people WHERE people.age > {n}"),
                ]),
                error: s(&[
                    &format!("SELECT sum(wage) FROM people WHERE age > {n}"),
                    &format!("SELECT sum(salary) FROM people WHERE age > {n})"),
                    &format!("SELECT sum(salary) FROM staff WHERE age > {n}"),
                ]),
                type_mismatch: s(&[
                    &format!("SELECT name FROM people WHERE age > {n}"),
                    &format!("SELECT name, salary FROM people WHERE age > {n}"),
                ]),
                same_type: s(&[
                    &format!("SELECT sum(salary) FROM people WHERE age < {n}"),
                    &format!("SELECT avg(salary) FROM people WHERE age > {n}"),
                    &format!("SELECT max(salary) FROM people WHERE age > {n}"),
                ]),
            }
        }
    }
}

fn token_logprobs(program: &str, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mean = rng.gen_range(0.05..0.6);
    program
        .split_whitespace()
        .map(|_| -mean * rng.gen_range(0.5..1.5))
        .collect()
}

/// Draws the class of one sample.
pub fn draw_class(config: &SyntheticConfig, rng: &mut impl Rng) -> VariantClass {
    if rng.gen_bool(config.p_correct) {
        VariantClass::Correct
    } else if rng.gen_bool(config.p_error) {
        VariantClass::Error
    } else if rng.gen_bool(config.p_type_mismatch) {
        VariantClass::TypeMismatch
    } else {
        VariantClass::SameTypeWrong
    }
}

/// Generates the corpus. Task `i` is built from its own seeded generator, so
/// a task does not change when the corpus grows.
pub fn generate(config: &SyntheticConfig) -> SyntheticCorpus {
    let limits = ExecutionLimits::default();
    let mut tasks = Vec::with_capacity(config.tasks);
    let mut samples = Vec::with_capacity(config.tasks * (config.samples_per_task + 1));
    for i in 0..config.tasks {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(i as u64 + 1);
        let task_id = format!("{}-{i:04}", config.id_prefix);
        let people = random_people(&mut rng);
        let db = bundle(&people);
        let t = template(&mut rng, &people);
        let gold = t.correct[0].clone();
        let gold_result = execute_sql(&gold, &db, &limits).canonical_repr;

        let pools: [(VariantClass, &Vec<String>); 4] = [
            (VariantClass::Correct, &t.correct),
            (VariantClass::Error, &t.error),
            (VariantClass::TypeMismatch, &t.type_mismatch),
            (VariantClass::SameTypeWrong, &t.same_type),
        ];
        let variants: Vec<(VariantClass, String, Vec<f64>)> = pools
            .iter()
            .flat_map(|(class, pool)| pool.iter().map(move |p| (*class, p.clone())))
            .map(|(class, p)| {
                let lps = token_logprobs(&p, &mut rng);
                (class, p, lps)
            })
            .collect();

        for _ in 0..config.samples_per_task {
            let class = draw_class(config, &mut rng);
            let pool: Vec<&(VariantClass, String, Vec<f64>)> =
                variants.iter().filter(|v| v.0 == class).collect();
            let (_, program, lps) = pool[rng.gen_range(0..pool.len())];
            samples.push(RawSample {
                task_id: task_id.clone(),
                program_text: program.clone(),
                token_logprobs: lps.clone(),
                greedy: false,
            });
        }
        let greedy = variants
            .iter()
            .max_by(|a, b| {
                let (sa, sb): (f64, f64) = (a.2.iter().sum(), b.2.iter().sum());
                sa.total_cmp(&sb)
            })
            .expect("variant pools are non-empty");
        samples.push(RawSample {
            task_id: task_id.clone(),
            program_text: greedy.1.clone(),
            token_logprobs: greedy.2.clone(),
            greedy: true,
        });

        tasks.push(TaskInstance {
            task_id,
            kind: DatasetKind::SqlQuery,
            nl_input: t.question,
            context: ExecutionContext::Database(db),
            gold_program: Some(gold),
            gold_result: Some(gold_result),
        });
    }
    SyntheticCorpus { tasks, samples }
}
