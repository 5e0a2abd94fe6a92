//! Task corpora, few-shot exemplars, offline sample files and prompt rendering.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::generator::RawSample;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },
    #[error("line {line}: duplicate task_id `{task_id}`")]
    DuplicateTaskId { line: usize, task_id: String },
    #[error("exemplar {index} has kind {found}, task has kind {expected}")]
    ExemplarKind {
        index: usize,
        found: DatasetKind,
        expected: DatasetKind,
    },
    #[error("template: {0}")]
    Template(String),
}

impl DatasetError {
    fn record(line: usize, message: impl Into<String>) -> Self {
        DatasetError::Record {
            line,
            message: message.into(),
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        DatasetError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    SqlQuery,
    ScalarScript,
    FunctionWithTests,
}

impl DatasetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::SqlQuery => "sql_query",
            DatasetKind::ScalarScript => "scalar_script",
            DatasetKind::FunctionWithTests => "function_with_tests",
        }
    }
}

impl std::fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sql_query" => Ok(DatasetKind::SqlQuery),
            "scalar_script" => Ok(DatasetKind::ScalarScript),
            "function_with_tests" => Ok(DatasetKind::FunctionWithTests),
            other => Err(format!("unknown dataset kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: String,
}

/// One table of a relational database bundle. Cells are JSON scalars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<Column>,
    #[serde(default)]
    pub rows: Vec<Vec<Value>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatabaseBundle {
    pub tables: Vec<Table>,
}

impl DatabaseBundle {
    fn validate(&self) -> Result<(), String> {
        let mut names = HashSet::new();
        for table in &self.tables {
            if !names.insert(table.name.to_lowercase()) {
                return Err(format!("duplicate table `{}`", table.name));
            }
            if table.columns.is_empty() {
                return Err(format!("table `{}` has no columns", table.name));
            }
            for (i, row) in table.rows.iter().enumerate() {
                if row.len() != table.columns.len() {
                    return Err(format!(
                        "table `{}` row {} has {} cells, expected {}",
                        table.name,
                        i + 1,
                        row.len(),
                        table.columns.len()
                    ));
                }
                if row.iter().any(|c| c.is_array() || c.is_object()) {
                    return Err(format!(
                        "table `{}` row {} has a non-scalar cell",
                        table.name,
                        i + 1
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub call: String,
    pub expected: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptContext {}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionTestsContext {
    pub tests: Vec<TestCase>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExecutionContext {
    Database(DatabaseBundle),
    Script(ScriptContext),
    FunctionTests(FunctionTestsContext),
}

impl ExecutionContext {
    pub fn kind(&self) -> DatasetKind {
        match self {
            ExecutionContext::Database(_) => DatasetKind::SqlQuery,
            ExecutionContext::Script(_) => DatasetKind::ScalarScript,
            ExecutionContext::FunctionTests(_) => DatasetKind::FunctionWithTests,
        }
    }

    pub fn tests(&self) -> Option<&[TestCase]> {
        match self {
            ExecutionContext::FunctionTests(ctx) => Some(&ctx.tests),
            _ => None,
        }
    }

    fn from_value(kind: DatasetKind, value: Value) -> Result<Self, String> {
        let ctx = match kind {
            DatasetKind::SqlQuery => {
                let db: DatabaseBundle =
                    serde_json::from_value(value).map_err(|e| format!("context: {e}"))?;
                db.validate()?;
                ExecutionContext::Database(db)
            }
            DatasetKind::ScalarScript => {
                let value = if value.is_null() {
                    Value::Object(Default::default())
                } else {
                    value
                };
                ExecutionContext::Script(
                    serde_json::from_value(value).map_err(|e| format!("context: {e}"))?,
                )
            }
            DatasetKind::FunctionWithTests => {
                let ctx: FunctionTestsContext =
                    serde_json::from_value(value).map_err(|e| format!("context: {e}"))?;
                if ctx.tests.is_empty() {
                    return Err("function_with_tests context needs at least one test".into());
                }
                ExecutionContext::FunctionTests(ctx)
            }
        };
        Ok(ctx)
    }

    fn to_value(&self) -> Value {
        let v = match self {
            ExecutionContext::Database(db) => serde_json::to_value(db),
            ExecutionContext::Script(ctx) => serde_json::to_value(ctx),
            ExecutionContext::FunctionTests(ctx) => serde_json::to_value(ctx),
        };
        v.expect("context types serialize infallibly")
    }
}

/// One language-to-code problem with its execution context and optional gold.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskInstance {
    pub task_id: String,
    pub kind: DatasetKind,
    pub nl_input: String,
    pub context: ExecutionContext,
    pub gold_program: Option<String>,
    pub gold_result: Option<String>,
}

impl TaskInstance {
    /// The test case shown in prompts for function-with-tests tasks.
    pub fn prompt_test(&self) -> Option<&TestCase> {
        self.context.tests().and_then(|t| t.first())
    }

    pub fn database(&self) -> Option<&DatabaseBundle> {
        match &self.context {
            ExecutionContext::Database(db) => Some(db),
            _ => None,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TaskRecord {
    task_id: String,
    kind: DatasetKind,
    nl_input: String,
    #[serde(default)]
    context: Value,
    #[serde(default)]
    gold_program: Option<String>,
    #[serde(default)]
    gold_result: Option<String>,
}

impl From<&TaskInstance> for TaskRecord {
    fn from(t: &TaskInstance) -> Self {
        TaskRecord {
            task_id: t.task_id.clone(),
            kind: t.kind,
            nl_input: t.nl_input.clone(),
            context: t.context.to_value(),
            gold_program: t.gold_program.clone(),
            gold_result: t.gold_result.clone(),
        }
    }
}

// serde_json appends " at line L column C" relative to the single record; the
// file line number is reported separately.
fn strip_position(message: String) -> String {
    match message.rfind(" at line ") {
        Some(i) => message[..i].to_string(),
        None => message,
    }
}

/// Iterates `(line_number, line)` over the non-blank lines of a JSONL file.
pub(crate) fn jsonl_lines(path: &Path) -> Result<Vec<(usize, String)>, DatasetError> {
    let file = fs::File::open(path).map_err(|e| DatasetError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| DatasetError::io(path, e))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

pub fn parse_task_line(line_no: usize, line: &str) -> Result<TaskInstance, DatasetError> {
    let record: TaskRecord = serde_json::from_str(line)
        .map_err(|e| DatasetError::record(line_no, strip_position(e.to_string())))?;
    if record.task_id.is_empty() {
        return Err(DatasetError::record(line_no, "empty task_id"));
    }
    let context = ExecutionContext::from_value(record.kind, record.context)
        .map_err(|m| DatasetError::record(line_no, m))?;
    Ok(TaskInstance {
        task_id: record.task_id,
        kind: record.kind,
        nl_input: record.nl_input,
        context,
        gold_program: record.gold_program,
        gold_result: record.gold_result,
    })
}

/// Loads a task corpus. Every record must be of `kind`; task ids are unique.
pub fn load_tasks(path: &Path, kind: DatasetKind) -> Result<Vec<TaskInstance>, DatasetError> {
    let mut seen = HashSet::new();
    let mut tasks = Vec::new();
    for (line_no, line) in jsonl_lines(path)? {
        let task = parse_task_line(line_no, &line)?;
        if task.kind != kind {
            return Err(DatasetError::record(
                line_no,
                format!("kind {} does not match corpus kind {kind}", task.kind),
            ));
        }
        if !seen.insert(task.task_id.clone()) {
            return Err(DatasetError::DuplicateTaskId {
                line: line_no,
                task_id: task.task_id,
            });
        }
        tasks.push(task);
    }
    Ok(tasks)
}

pub fn task_to_json(task: &TaskInstance) -> String {
    serde_json::to_string(&TaskRecord::from(task)).expect("task records serialize")
}

pub fn write_tasks(path: &Path, tasks: &[TaskInstance]) -> Result<(), DatasetError> {
    let mut out = String::new();
    for t in tasks {
        out.push_str(&task_to_json(t));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| DatasetError::io(path, e))
}

/// A few-shot exemplar `(x_i, y_i)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub kind: DatasetKind,
    pub nl_input: String,
    pub program: String,
}

pub fn load_exemplars(path: &Path) -> Result<Vec<Exemplar>, DatasetError> {
    jsonl_lines(path)?
        .into_iter()
        .map(|(line_no, line)| {
            serde_json::from_str(&line)
                .map_err(|e| DatasetError::record(line_no, strip_position(e.to_string())))
        })
        .collect()
}

/// Loads offline samples grouped by task id, preserving file order within
/// each group. Ids are not checked against any corpus here.
pub fn load_offline_samples(path: &Path) -> Result<BTreeMap<String, Vec<RawSample>>, DatasetError> {
    let mut grouped: BTreeMap<String, Vec<RawSample>> = BTreeMap::new();
    for (line_no, line) in jsonl_lines(path)? {
        let sample: RawSample = serde_json::from_str(&line)
            .map_err(|e| DatasetError::record(line_no, strip_position(e.to_string())))?;
        sample
            .validate()
            .map_err(|m| DatasetError::record(line_no, m))?;
        grouped.entry(sample.task_id.clone()).or_default().push(sample);
    }
    Ok(grouped)
}

pub fn write_offline_samples(path: &Path, samples: &[RawSample]) -> Result<(), DatasetError> {
    let mut file = fs::File::create(path).map_err(|e| DatasetError::io(path, e))?;
    for s in samples {
        let line = serde_json::to_string(s).expect("samples serialize");
        writeln!(file, "{line}").map_err(|e| DatasetError::io(path, e))?;
    }
    Ok(())
}

/// Per-kind prompt serialization rules.
///
/// `exemplar` may reference `{input}` and `{program}`; `task` may reference
/// `{input}` and `{context}` and must contain `{input}`. Serialized exemplars
/// are each followed by `separator`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub kind: DatasetKind,
    pub exemplar: String,
    pub task: String,
    #[serde(default = "default_separator")]
    pub separator: String,
}

fn default_separator() -> String {
    "\n".to_string()
}

impl PromptTemplate {
    pub fn default_for(kind: DatasetKind) -> Self {
        let (exemplar, task) = match kind {
            DatasetKind::SqlQuery => (
                "-- Question: {input}\n-- SQL:\n{program}\n",
                "{context}\n-- Question: {input}\n-- SQL:\n",
            ),
            DatasetKind::ScalarScript => (
                "# Question: {input}\n{program}\n",
                "# Question: {input}\n",
            ),
            DatasetKind::FunctionWithTests => (
                "# {input}\n{program}\n",
                "# {input}\n{context}\n",
            ),
        };
        PromptTemplate {
            kind,
            exemplar: exemplar.to_string(),
            task: task.to_string(),
            separator: default_separator(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
        let template: PromptTemplate =
            toml::from_str(&text).map_err(|e| DatasetError::Template(e.to_string()))?;
        template.validate()?;
        Ok(template)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        check_placeholders(&self.exemplar, &["input", "program"])?;
        check_placeholders(&self.task, &["input", "context"])?;
        if !self.task.contains("{input}") {
            return Err(DatasetError::Template(
                "task format must contain {input}".into(),
            ));
        }
        Ok(())
    }
}

fn check_placeholders(format: &str, allowed: &[&str]) -> Result<(), DatasetError> {
    render(format, |name| allowed.contains(&name).then_some(""))
        .map(|_| ())
        .map_err(DatasetError::Template)
}

/// Single-pass `{name}` substitution; substituted text is never re-scanned.
fn render<'a>(
    format: &str,
    lookup: impl Fn(&str) -> Option<&'a str>,
) -> Result<String, String> {
    let mut out = String::with_capacity(format.len());
    let mut rest = format;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if after[..close].chars().all(|c| c.is_ascii_alphanumeric() || c == '_') && close > 0 => {
                let name = &after[..close];
                let value = lookup(name).ok_or_else(|| format!("unknown placeholder {{{name}}}"))?;
                out.push_str(value);
                rest = &after[close + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

fn sql_literal_type(ty: &str) -> &str {
    if ty.is_empty() {
        "text"
    } else {
        ty
    }
}

/// Text form of the task's context as shown in prompts.
pub fn render_context(task: &TaskInstance) -> String {
    match &task.context {
        ExecutionContext::Database(db) => db
            .tables
            .iter()
            .map(|t| {
                let cols: Vec<String> = t
                    .columns
                    .iter()
                    .map(|c| format!("{} {}", c.name, sql_literal_type(&c.ty)))
                    .collect();
                format!("CREATE TABLE {} ({});", t.name, cols.join(", "))
            })
            .collect::<Vec<_>>()
            .join("\n"),
        ExecutionContext::Script(_) => String::new(),
        ExecutionContext::FunctionTests(_) => task
            .prompt_test()
            .map(|t| format!("assert {} == {}", t.call, t.expected))
            .unwrap_or_default(),
    }
}

pub fn serialize_exemplar(exemplar: &Exemplar, template: &PromptTemplate) -> Result<String, DatasetError> {
    render(&template.exemplar, |name| match name {
        "input" => Some(exemplar.nl_input.as_str()),
        "program" => Some(exemplar.program.as_str()),
        _ => None,
    })
    .map_err(DatasetError::Template)
}

/// Serializes the task without its gold fields.
pub fn serialize_task(task: &TaskInstance, template: &PromptTemplate) -> Result<String, DatasetError> {
    let context = render_context(task);
    render(&template.task, |name| match name {
        "input" => Some(task.nl_input.as_str()),
        "context" => Some(context.as_str()),
        _ => None,
    })
    .map_err(DatasetError::Template)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FewShotPrompt {
    pub kind: DatasetKind,
    pub exemplars: Vec<Exemplar>,
    pub rendered: String,
}

pub fn build_prompt(
    task: &TaskInstance,
    exemplars: &[Exemplar],
    template: &PromptTemplate,
) -> Result<FewShotPrompt, DatasetError> {
    if template.kind != task.kind {
        return Err(DatasetError::Template(format!(
            "template is for {}, task is {}",
            template.kind, task.kind
        )));
    }
    let mut rendered = String::new();
    for (index, ex) in exemplars.iter().enumerate() {
        if ex.kind != task.kind {
            return Err(DatasetError::ExemplarKind {
                index,
                found: ex.kind,
                expected: task.kind,
            });
        }
        rendered.push_str(&serialize_exemplar(ex, template)?);
        rendered.push_str(&template.separator);
    }
    rendered.push_str(&serialize_task(task, template)?);
    Ok(FewShotPrompt {
        kind: task.kind,
        exemplars: exemplars.to_vec(),
        rendered,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    fn script_task(id: &str, input: &str) -> TaskInstance {
        TaskInstance {
            task_id: id.into(),
            kind: DatasetKind::ScalarScript,
            nl_input: input.into(),
            context: ExecutionContext::Script(ScriptContext {}),
            gold_program: None,
            gold_result: Some("1".into()),
        }
    }

    #[test]
    fn empty_file_gives_no_tasks() {
        let f = write_lines(&[]);
        assert!(load_tasks(f.path(), DatasetKind::SqlQuery).unwrap().is_empty());
    }

    #[test]
    fn missing_field_names_line() {
        let good = r#"{"task_id":"a","kind":"scalar_script","nl_input":"q","context":{},"gold_result":"1"}"#;
        let good2 = r#"{"task_id":"b","kind":"scalar_script","nl_input":"q","context":{},"gold_result":"1"}"#;
        let bad = r#"{"task_id":"c","kind":"scalar_script","context":{},"gold_result":"1"}"#;
        let f = write_lines(&[good, good2, bad]);
        let err = load_tasks(f.path(), DatasetKind::ScalarScript).unwrap_err();
        assert!(err.to_string().starts_with("line 3: missing field"), "{err}");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let line = r#"{"task_id":"a","kind":"scalar_script","nl_input":"q","context":{}}"#;
        let f = write_lines(&[line, line]);
        let err = load_tasks(f.path(), DatasetKind::ScalarScript).unwrap_err();
        assert!(matches!(err, DatasetError::DuplicateTaskId { line: 2, .. }));
    }

    #[test]
    fn function_tasks_need_tests() {
        let line = r#"{"task_id":"a","kind":"function_with_tests","nl_input":"q","context":{"tests":[]}}"#;
        let f = write_lines(&[line]);
        assert!(load_tasks(f.path(), DatasetKind::FunctionWithTests).is_err());
    }

    #[test]
    fn ragged_database_rows_rejected() {
        let line = r#"{"task_id":"a","kind":"sql_query","nl_input":"q","context":{"tables":[{"name":"t","columns":[{"name":"a","type":"int"}],"rows":[[1,2]]}]}}"#;
        let f = write_lines(&[line]);
        let err = load_tasks(f.path(), DatasetKind::SqlQuery).unwrap_err();
        assert!(err.to_string().contains("row 1 has 2 cells"), "{err}");
    }

    #[test]
    fn offline_samples_group_and_validate() {
        let f = write_lines(&[
            r#"{"task_id":"t1","program_text":"a","token_logprobs":[-0.1]}"#,
            r#"{"task_id":"t1","program_text":"b","token_logprobs":[-0.2,-0.3]}"#,
            r#"{"task_id":"t1","program_text":"c","token_logprobs":[-0.5]}"#,
        ]);
        let m = load_offline_samples(f.path()).unwrap();
        assert_eq!(m.len(), 1);
        let texts: Vec<_> = m["t1"].iter().map(|s| s.program_text.as_str()).collect();
        assert_eq!(texts, ["a", "b", "c"]);

        let bad = write_lines(&[r#"{"task_id":"t1","program_text":"a","token_logprobs":[-0.1, 0.2]}"#]);
        let err = load_offline_samples(bad.path()).unwrap_err();
        assert!(err.to_string().contains("logprob > 0"), "{err}");
    }

    #[test]
    fn offline_samples_uniform_tally() {
        let mut lines = Vec::new();
        for i in 0..100 {
            lines.push(format!(
                r#"{{"task_id":"t{}","program_text":"p{i}","token_logprobs":[-1.0]}}"#,
                i % 10
            ));
        }
        let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
        let f = write_lines(&refs);
        let m = load_offline_samples(f.path()).unwrap();
        let mut tally = std::collections::HashMap::new();
        for i in 0..100 {
            *tally.entry(format!("t{}", i % 10)).or_insert(0usize) += 1;
        }
        assert_eq!(m.len(), tally.len());
        for (id, list) in &m {
            assert_eq!(list.len(), tally[id]);
            assert_eq!(list.len(), 10);
        }
    }

    #[test]
    fn prompt_without_exemplars_is_task_serialization() {
        let t = script_task("a", "How many apples?");
        let tpl = PromptTemplate::default_for(DatasetKind::ScalarScript);
        let p = build_prompt(&t, &[], &tpl).unwrap();
        assert_eq!(p.rendered, serialize_task(&t, &tpl).unwrap());
        assert_eq!(p.rendered, "# Question: How many apples?\n");
    }

    #[test]
    fn prompt_length_is_sum_of_parts() {
        let t = script_task("a", "Q3");
        let tpl = PromptTemplate::default_for(DatasetKind::ScalarScript);
        let ex = vec![
            Exemplar { kind: DatasetKind::ScalarScript, nl_input: "Q1".into(), program: "answer = 1".into() },
            Exemplar { kind: DatasetKind::ScalarScript, nl_input: "Q2".into(), program: "answer = 2".into() },
        ];
        let p = build_prompt(&t, &ex, &tpl).unwrap();
        let expected = String::new()
            + "# Question: Q1\nanswer = 1\n"
            + "\n"
            + "# Question: Q2\nanswer = 2\n"
            + "\n"
            + "# Question: Q3\n";
        assert_eq!(p.rendered, expected);
        assert_eq!(p.rendered.len(), expected.len());
    }

    #[test]
    fn first_test_case_is_in_function_prompt() {
        let t = TaskInstance {
            task_id: "m1".into(),
            kind: DatasetKind::FunctionWithTests,
            nl_input: "Write a function to find the first missing positive number.".into(),
            context: ExecutionContext::FunctionTests(FunctionTestsContext {
                tests: vec![
                    TestCase { call: "first_missing_positive([1,2,0])".into(), expected: "3".into() },
                    TestCase { call: "first_missing_positive([0,-1,-2,1,5,8])".into(), expected: "2".into() },
                ],
            }),
            gold_program: None,
            gold_result: None,
        };
        let tpl = PromptTemplate::default_for(DatasetKind::FunctionWithTests);
        let p = build_prompt(&t, &[], &tpl).unwrap();
        assert!(p.rendered.contains("assert first_missing_positive([1,2,0]) == 3"));
        assert!(!p.rendered.contains("[0,-1,-2,1,5,8]"));
    }

    #[test]
    fn wrong_kind_exemplar_rejected() {
        let t = script_task("a", "Q");
        let tpl = PromptTemplate::default_for(DatasetKind::ScalarScript);
        let ex = [Exemplar { kind: DatasetKind::SqlQuery, nl_input: "x".into(), program: "SELECT 1".into() }];
        assert!(matches!(
            build_prompt(&t, &ex, &tpl),
            Err(DatasetError::ExemplarKind { index: 0, .. })
        ));
    }

    #[test]
    fn placeholders_in_inputs_are_not_expanded() {
        let t = script_task("a", "what is {context}?");
        let tpl = PromptTemplate::default_for(DatasetKind::ScalarScript);
        assert_eq!(
            build_prompt(&t, &[], &tpl).unwrap().rendered,
            "# Question: what is {context}?\n"
        );
    }

    #[test]
    fn unknown_template_placeholder_rejected() {
        let mut tpl = PromptTemplate::default_for(DatasetKind::ScalarScript);
        tpl.task = "{input} {gold}".into();
        assert!(tpl.validate().is_err());
        tpl.task = "{context}".into();
        assert!(tpl.validate().is_err());
    }

    #[test]
    fn sql_prompt_contains_schema() {
        let line = r#"{"task_id":"a","kind":"sql_query","nl_input":"How many singers?","context":{"tables":[{"name":"singer","columns":[{"name":"id","type":"int"},{"name":"name","type":"text"}],"rows":[]}]}}"#;
        let t = parse_task_line(1, line).unwrap();
        let p = build_prompt(&t, &[], &PromptTemplate::default_for(DatasetKind::SqlQuery)).unwrap();
        assert_eq!(
            p.rendered,
            "CREATE TABLE singer (id int, name text);\n-- Question: How many singers?\n-- SQL:\n"
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn prompt_is_injective_in_input(a in "\\PC{0,24}", b in "\\PC{0,24}") {
                prop_assume!(a != b);
                let tpl = PromptTemplate::default_for(DatasetKind::ScalarScript);
                let ex = [Exemplar { kind: DatasetKind::ScalarScript, nl_input: "e".into(), program: "answer = 0".into() }];
                let pa = build_prompt(&script_task("x", &a), &ex, &tpl).unwrap();
                let pb = build_prompt(&script_task("x", &b), &ex, &tpl).unwrap();
                prop_assert_ne!(pa.rendered, pb.rendered);
            }
        }
    }
}
