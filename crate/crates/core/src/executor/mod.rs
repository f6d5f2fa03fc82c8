//! Read-only SQL execution with wall-clock timeouts and result fingerprints.
//!
//! Every call opens its own read-only connection. A statement is refused
//! unless its first keyword is SELECT or WITH and SQLite reports the prepared
//! statement as read-only. Long-running statements are interrupted from a
//! progress handler once the deadline passes.

mod fingerprint;
mod registry;

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rusqlite::{types::ValueRef, Connection, ErrorCode, OpenFlags};
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

pub use fingerprint::{normalize_rows, normalize_rows_with, Cell, Digest, RaggedRows, ResultFingerprint, REAL_DECIMALS};
pub use registry::{DatabaseRef, DatabaseRegistry, RegistryError};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// VM instructions between deadline checks.
const PROGRESS_INTERVAL: i32 = 1_000;

const MUTATING_KEYWORDS: &[&str] = &[
    "INSERT",
    "UPDATE",
    "DELETE",
    "REPLACE",
    "UPSERT",
    "CREATE",
    "DROP",
    "ALTER",
    "ATTACH",
    "DETACH",
    "PRAGMA",
    "VACUUM",
    "REINDEX",
    "ANALYZE",
    "BEGIN",
    "COMMIT",
    "END",
    "ROLLBACK",
    "SAVEPOINT",
    "RELEASE",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Syntax,
    MissingObject,
    ReadOnlyViolation,
    Runtime,
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorKind::Syntax => "syntax",
            ErrorKind::MissingObject => "missing_object",
            ErrorKind::ReadOnlyViolation => "read_only_violation",
            ErrorKind::Runtime => "runtime",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Success,
    Error,
    Timeout,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExecResult {
    Success(ResultFingerprint),
    Error { kind: ErrorKind, message: String },
    Timeout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionOutcome {
    pub result: ExecResult,
    pub elapsed: Duration,
}

impl ExecutionOutcome {
    pub fn success(fp: ResultFingerprint, elapsed: Duration) -> Self {
        ExecutionOutcome {
            result: ExecResult::Success(fp),
            elapsed,
        }
    }

    pub fn error(kind: ErrorKind, message: impl Into<String>, elapsed: Duration) -> Self {
        ExecutionOutcome {
            result: ExecResult::Error {
                kind,
                message: message.into(),
            },
            elapsed,
        }
    }

    pub fn timeout(elapsed: Duration) -> Self {
        ExecutionOutcome {
            result: ExecResult::Timeout,
            elapsed,
        }
    }

    pub fn status(&self) -> ExecStatus {
        match self.result {
            ExecResult::Success(_) => ExecStatus::Success,
            ExecResult::Error { .. } => ExecStatus::Error,
            ExecResult::Timeout => ExecStatus::Timeout,
        }
    }

    pub fn fingerprint(&self) -> Option<&ResultFingerprint> {
        match &self.result {
            ExecResult::Success(fp) => Some(fp),
            _ => None,
        }
    }

    pub fn error_kind(&self) -> Option<ErrorKind> {
        match &self.result {
            ExecResult::Error { kind, .. } => Some(*kind),
            _ => None,
        }
    }

    pub fn message(&self) -> Option<&str> {
        match &self.result {
            ExecResult::Error { message, .. } => Some(message),
            _ => None,
        }
    }

    pub fn is_success(&self) -> bool {
        matches!(self.result, ExecResult::Success(_))
    }

    pub fn digest(&self) -> Option<Digest> {
        self.fingerprint().map(|fp| fp.digest)
    }
}

/// True iff both executions succeeded with identical fingerprints. Errors and
/// timeouts match nothing, not even each other.
pub fn results_equivalent(a: &ExecutionOutcome, b: &ExecutionOutcome) -> bool {
    match (a.fingerprint(), b.fingerprint()) {
        (Some(x), Some(y)) => x.digest == y.digest && x.column_count == y.column_count,
        _ => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecOptions {
    pub timeout: Duration,
    /// Compare rows as a sequence instead of a multiset.
    pub order_sensitive: bool,
}

impl Default for ExecOptions {
    fn default() -> Self {
        ExecOptions {
            timeout: DEFAULT_TIMEOUT,
            order_sensitive: false,
        }
    }
}

impl ExecOptions {
    pub fn with_timeout(timeout: Duration) -> Self {
        ExecOptions {
            timeout,
            ..Default::default()
        }
    }
}

/// Execute one statement read-only against `db`, never panicking or
/// returning an error past this boundary.
pub fn execute_sql(db: &DatabaseRef, sql: &str, timeout: Duration) -> ExecutionOutcome {
    execute_sql_with(db, sql, &ExecOptions::with_timeout(timeout))
}

pub fn execute_sql_with(db: &DatabaseRef, sql: &str, opts: &ExecOptions) -> ExecutionOutcome {
    let start = Instant::now();
    let outcome = run(db, sql, opts, start);
    match outcome {
        Ok(fp) => ExecutionOutcome::success(fp, start.elapsed()),
        Err(Failure::Timeout) => ExecutionOutcome::timeout(start.elapsed()),
        Err(Failure::Error(kind, message)) => ExecutionOutcome::error(kind, message, start.elapsed()),
    }
}

enum Failure {
    Timeout,
    Error(ErrorKind, String),
}

impl From<rusqlite::Error> for Failure {
    fn from(e: rusqlite::Error) -> Self {
        classify(&e)
    }
}

fn classify(e: &rusqlite::Error) -> Failure {
    let message = e.to_string();
    match e.sqlite_error_code() {
        Some(ErrorCode::OperationInterrupted) => return Failure::Timeout,
        Some(ErrorCode::ReadOnly) => return Failure::Error(ErrorKind::ReadOnlyViolation, message),
        _ => {}
    }
    if matches!(e, rusqlite::Error::MultipleStatement) {
        return Failure::Error(ErrorKind::Syntax, "multiple statements are not allowed".into());
    }
    let lower = message.to_ascii_lowercase();
    let kind = if lower.contains("syntax error") || lower.contains("incomplete input") || lower.contains("unrecognized token") {
        ErrorKind::Syntax
    } else if lower.contains("no such ") {
        ErrorKind::MissingObject
    } else if lower.contains("readonly") || lower.contains("read-only") {
        ErrorKind::ReadOnlyViolation
    } else {
        ErrorKind::Runtime
    };
    Failure::Error(kind, message)
}

fn strip_statement(sql: &str) -> &str {
    sql.trim().trim_end_matches(|c: char| c == ';' || c.is_whitespace())
}

fn run(db: &DatabaseRef, sql: &str, opts: &ExecOptions, start: Instant) -> Result<ResultFingerprint, Failure> {
    let sql = strip_statement(sql);
    let Some(keyword) = crate::sqltext::first_keyword(sql) else {
        return Err(Failure::Error(ErrorKind::Syntax, "empty statement".into()));
    };
    if MUTATING_KEYWORDS.contains(&keyword.as_str()) {
        return Err(Failure::Error(
            ErrorKind::ReadOnlyViolation,
            format!("{keyword} statements are not permitted"),
        ));
    }

    let conn = Connection::open_with_flags(&db.path, OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX)
        .map_err(|e| Failure::Error(ErrorKind::Runtime, format!("cannot open {}: {e}", db.db_id)))?;
    conn.pragma_update(None, "query_only", true)?;

    let deadline = start + opts.timeout;
    conn.progress_handler(PROGRESS_INTERVAL, Some(move || Instant::now() >= deadline));

    let mut stmt = conn.prepare(sql)?;
    if !matches!(keyword.as_str(), "SELECT" | "WITH" | "VALUES") || !stmt.readonly() {
        return Err(Failure::Error(
            ErrorKind::ReadOnlyViolation,
            "only read-only SELECT/WITH queries are permitted".into(),
        ));
    }
    let column_count = stmt.column_count();
    let mut rows = stmt.query([])?;
    let mut out = Vec::new();
    while let Some(row) = rows.next()? {
        let mut cells = Vec::with_capacity(column_count);
        for i in 0..column_count {
            cells.push(match row.get_ref(i)? {
                ValueRef::Null => Cell::Null,
                ValueRef::Integer(v) => Cell::Int(v),
                ValueRef::Real(v) => Cell::from_real(v),
                ValueRef::Text(t) => Cell::Text(String::from_utf8_lossy(t).into_owned()),
                ValueRef::Blob(b) => Cell::Blob(b.to_vec()),
            });
        }
        out.push(cells);
    }
    normalize_rows_with(out, Some(column_count), opts.order_sensitive).map_err(|e| Failure::Error(ErrorKind::Runtime, e.to_string()))
}

/// CREATE statements for every table and view, in definition order.
pub fn load_schema_ddl(db: &DatabaseRef) -> Result<String, rusqlite::Error> {
    let conn = Connection::open_with_flags(&db.path, OpenFlags::SQLITE_OPEN_READ_ONLY)?;
    let mut stmt = conn.prepare(
        "SELECT sql FROM sqlite_master WHERE type IN ('table', 'view') \
         AND sql IS NOT NULL AND name NOT LIKE 'sqlite_%' ORDER BY rowid",
    )?;
    let ddl: Vec<String> = stmt.query_map([], |r| r.get::<_, String>(0))?.collect::<Result<_, _>>()?;
    Ok(ddl.into_iter().map(|s| format!("{s};")).collect::<Vec<_>>().join("\n\n"))
}

/// Async front end over [`execute_sql_with`]: each call runs on the
/// blocking pool, bounded by a shared parallelism cap.
#[derive(Debug, Clone)]
pub struct Executor {
    opts: ExecOptions,
    permits: Arc<Semaphore>,
}

impl Executor {
    pub fn new(opts: ExecOptions, max_parallel: usize) -> Self {
        Executor {
            opts,
            permits: Arc::new(Semaphore::new(max_parallel.max(1))),
        }
    }

    pub fn options(&self) -> &ExecOptions {
        &self.opts
    }

    pub async fn execute(&self, db: &DatabaseRef, sql: &str) -> ExecutionOutcome {
        let _permit = self.permits.acquire().await.expect("executor semaphore closed");
        let db = db.clone();
        let sql = sql.to_string();
        let opts = self.opts;
        match tokio::task::spawn_blocking(move || execute_sql_with(&db, &sql, &opts)).await {
            Ok(outcome) => outcome,
            Err(e) => ExecutionOutcome::error(ErrorKind::Runtime, format!("executor task failed: {e}"), Duration::ZERO),
        }
    }

    /// Execute a batch, running each distinct SQL text once. `None` entries
    /// (no SQL could be extracted) become syntax errors.
    pub async fn execute_batch(&self, db: &DatabaseRef, sqls: &[Option<String>]) -> Vec<ExecutionOutcome> {
        let mut unique: Vec<&str> = Vec::new();
        let mut index: HashMap<&str, usize> = HashMap::new();
        for sql in sqls.iter().flatten() {
            index.entry(sql.as_str()).or_insert_with(|| {
                unique.push(sql.as_str());
                unique.len() - 1
            });
        }
        let results = futures::future::join_all(unique.iter().map(|sql| self.execute(db, sql))).await;
        sqls.iter()
            .map(|sql| match sql {
                Some(s) => results[index[s.as_str()]].clone(),
                None => ExecutionOutcome::error(ErrorKind::Syntax, "no SQL statement found", Duration::ZERO),
            })
            .collect()
    }
}
