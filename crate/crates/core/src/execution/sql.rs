use std::sync::OnceLock;
use std::time::Instant;

use regex::Regex;
use rusqlite::limits::Limit;
use rusqlite::types::ValueRef;
use rusqlite::{params_from_iter, Connection, ErrorCode};
use serde_json::Value;

use super::{ExecutionLimits, ExecutionOutcome, Payload};
use crate::dataset::{DatabaseBundle, Table};
use crate::repr::{canonical_number, canonical_text, cap_bytes, linearize_table};

// Progress-handler granularity, in virtual machine instructions.
const PROGRESS_PERIOD: i32 = 1_000;

fn quote_ident(name: &str) -> String {
    format!("\"{}\"", name.replace('"', "\"\""))
}

fn column_type(ty: &str) -> &str {
    if !ty.is_empty() && ty.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        ty
    } else {
        "TEXT"
    }
}

fn json_to_sql(cell: &Value) -> rusqlite::types::Value {
    use rusqlite::types::Value as V;
    match cell {
        Value::Null => V::Null,
        Value::Bool(b) => V::Integer(*b as i64),
        Value::Number(n) => match n.as_i64() {
            Some(i) => V::Integer(i),
            None => V::Real(n.as_f64().unwrap_or(f64::NAN)),
        },
        Value::String(s) => V::Text(s.clone()),
        other => V::Text(other.to_string()),
    }
}

fn load_table(conn: &Connection, table: &Table) -> rusqlite::Result<()> {
    let cols: Vec<String> = table
        .columns
        .iter()
        .map(|c| format!("{} {}", quote_ident(&c.name), column_type(&c.ty)))
        .collect();
    conn.execute(
        &format!("CREATE TABLE {} ({})", quote_ident(&table.name), cols.join(", ")),
        [],
    )?;
    let placeholders = vec!["?"; table.columns.len()].join(", ");
    let mut insert = conn.prepare(&format!(
        "INSERT INTO {} VALUES ({placeholders})",
        quote_ident(&table.name)
    ))?;
    for row in &table.rows {
        insert.execute(params_from_iter(row.iter().map(json_to_sql)))?;
    }
    Ok(())
}

/// A fresh in-memory database holding the bundle, switched to read-only
/// with ATTACH disabled.
fn open_session(db: &DatabaseBundle) -> rusqlite::Result<Connection> {
    let mut conn = Connection::open_in_memory()?;
    {
        let tx = conn.transaction()?;
        for table in &db.tables {
            load_table(&tx, table)?;
        }
        tx.commit()?;
    }
    conn.pragma_update(None, "query_only", true)?;
    conn.set_limit(Limit::SQLITE_LIMIT_ATTACHED, 0);
    Ok(conn)
}

fn canonical_cell(value: ValueRef<'_>) -> String {
    match value {
        ValueRef::Null => "null".to_string(),
        ValueRef::Integer(i) => i.to_string(),
        ValueRef::Real(f) => canonical_number(f),
        ValueRef::Text(t) => canonical_text(&String::from_utf8_lossy(t)),
        ValueRef::Blob(b) => format!("<blob {} bytes>", b.len()),
    }
}

fn has_order_by(program: &str) -> bool {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\border\s+by\b").unwrap())
        .is_match(program)
}

enum QueryFailure {
    Interrupted,
    Engine(String),
}

impl From<rusqlite::Error> for QueryFailure {
    fn from(e: rusqlite::Error) -> Self {
        match &e {
            rusqlite::Error::SqliteFailure(f, _) if f.code == ErrorCode::OperationInterrupted => {
                QueryFailure::Interrupted
            }
            // The input-error form appends the query text and an offset.
            rusqlite::Error::SqlInputError { msg, .. } => QueryFailure::Engine(msg.clone()),
            _ => QueryFailure::Engine(e.to_string()),
        }
    }
}

fn run_query(
    conn: &Connection,
    program: &str,
) -> Result<(Vec<String>, Vec<Vec<String>>), QueryFailure> {
    let mut stmt = conn.prepare(program)?;
    if !stmt.readonly() {
        return Err(QueryFailure::Engine("attempt to write a readonly database".into()));
    }
    let headers: Vec<String> = stmt.column_names().iter().map(|s| canonical_text(s)).collect();
    if headers.is_empty() {
        return Err(QueryFailure::Engine("statement returns no columns".into()));
    }
    let width = headers.len();
    let mut rows = Vec::new();
    let mut cursor = stmt.query([])?;
    while let Some(row) = cursor.next()? {
        let mut cells = Vec::with_capacity(width);
        for i in 0..width {
            cells.push(canonical_cell(row.get_ref(i)?));
        }
        rows.push(cells);
    }
    Ok((headers, rows))
}

/// Executes one SQL query on a fresh read-only copy of `db`.
///
/// A single-cell result is rendered as the bare cell; anything else is the
/// linearized table. Rows are sorted unless the query has an ORDER BY.
pub fn execute_sql(program: &str, db: &DatabaseBundle, limits: &ExecutionLimits) -> ExecutionOutcome {
    let start = Instant::now();
    let conn = match open_session(db) {
        Ok(c) => c,
        Err(e) => {
            return ExecutionOutcome::error(
                &format!("database setup failed: {e}"),
                Payload::None,
                start.elapsed(),
            )
        }
    };
    let deadline = start + limits.timeout;
    conn.progress_handler(PROGRESS_PERIOD, Some(move || Instant::now() >= deadline));

    let program = program.trim().trim_end_matches(';').trim_end();
    let result = run_query(&conn, program);
    let elapsed = start.elapsed();
    match result {
        Err(QueryFailure::Interrupted) => ExecutionOutcome::timeout(elapsed),
        Err(QueryFailure::Engine(msg)) => ExecutionOutcome::error(&msg, Payload::None, elapsed),
        Ok((headers, mut rows)) => {
            if !has_order_by(program) {
                rows.sort();
            }
            let repr = if rows.len() == 1 && headers.len() == 1 {
                rows[0][0].clone()
            } else {
                linearize_table(&headers, &rows, limits.max_output_cells)
                    .expect("engine rows match their header width")
                    .text
            };
            let repr = cap_bytes(repr, limits.max_result_bytes);
            rows.truncate((limits.max_output_cells / headers.len()).max(1));
            ExecutionOutcome::success(repr, Payload::Table { headers, rows }, elapsed)
        }
    }
}
