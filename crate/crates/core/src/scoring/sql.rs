//! SQL execution against database fixtures.
//!
//! Execution goes through the narrow [`SqlBackend`] interface: apply a fixture
//! script to get a session, then run single statements against it with a
//! timeout. [`SqliteBackend`] is the pinned engine. Its sessions are
//! read-only: `query_only` is set, an authorizer admits only reads, and each
//! call runs exactly one statement.

use std::cmp::Ordering;
use std::fmt;
use std::time::{Duration, Instant};

use rusqlite::hooks::{AuthAction, AuthContext, Authorization};
use rusqlite::types::ValueRef;
use rusqlite::{limits::Limit, Batch, Connection};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A database fixture: an identifier plus the DDL/DML script that builds it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DbFixture {
    pub fixture_id: String,
    pub script: String,
}

impl DbFixture {
    pub fn new(fixture_id: impl Into<String>, script: impl Into<String>) -> Self {
        Self {
            fixture_id: fixture_id.into(),
            script: script.into(),
        }
    }
}

/// A single SQL value after canonicalization.
#[derive(Debug, Clone, PartialEq)]
pub enum SqlValue {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
    Blob(Vec<u8>),
}

impl SqlValue {
    fn rank(&self) -> u8 {
        match self {
            SqlValue::Null => 0,
            SqlValue::Integer(_) | SqlValue::Real(_) => 1,
            SqlValue::Text(_) => 2,
            SqlValue::Blob(_) => 3,
        }
    }

    fn as_f64(&self) -> Option<f64> {
        match self {
            SqlValue::Integer(i) => Some(*i as f64),
            SqlValue::Real(r) => Some(*r),
            _ => None,
        }
    }

    /// Total order used to sort rows before multiset comparison. Integers and
    /// reals share one numeric ordering.
    fn total_cmp(&self, other: &SqlValue) -> Ordering {
        match (self, other) {
            (SqlValue::Integer(a), SqlValue::Integer(b)) => a.cmp(b),
            (SqlValue::Text(a), SqlValue::Text(b)) => a.cmp(b),
            (SqlValue::Blob(a), SqlValue::Blob(b)) => a.cmp(b),
            _ => match (self.as_f64(), other.as_f64()) {
                (Some(a), Some(b)) => a.total_cmp(&b),
                _ => self.rank().cmp(&other.rank()),
            },
        }
    }

    /// Equality with numeric unification: integers and reals compare by value
    /// within `tol` (relative above magnitude 1, absolute below).
    pub fn matches(&self, other: &SqlValue, tol: f64) -> bool {
        match (self, other) {
            (SqlValue::Null, SqlValue::Null) => true,
            (SqlValue::Integer(a), SqlValue::Integer(b)) => a == b,
            (SqlValue::Text(a), SqlValue::Text(b)) => a == b,
            (SqlValue::Blob(a), SqlValue::Blob(b)) => a == b,
            _ => match (self.as_f64(), other.as_f64()) {
                (Some(a), Some(b)) => {
                    let scale = 1f64.max(a.abs()).max(b.abs());
                    (a - b).abs() <= tol * scale
                }
                _ => false,
            },
        }
    }
}

impl fmt::Display for SqlValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SqlValue::Null => f.write_str("NULL"),
            SqlValue::Integer(i) => write!(f, "{i}"),
            SqlValue::Real(r) => write!(f, "{r:?}"),
            SqlValue::Text(t) => write!(f, "{t:?}"),
            SqlValue::Blob(b) => write!(f, "x'{}'", hex::encode(b)),
        }
    }
}

/// Rows returned by one statement.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultSet {
    pub columns: usize,
    pub rows: Vec<Vec<SqlValue>>,
}

impl ResultSet {
    /// Multiset equality of row tuples (column order significant). With
    /// `ordered`, row order must match as well.
    pub fn matches(&self, other: &ResultSet, tol: f64, ordered: bool) -> bool {
        if self.columns != other.columns || self.rows.len() != other.rows.len() {
            return false;
        }
        let rows_equal = |a: &Vec<SqlValue>, b: &Vec<SqlValue>| {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.matches(y, tol))
        };
        if ordered {
            return self.rows.iter().zip(&other.rows).all(|(a, b)| rows_equal(a, b));
        }
        let mut left: Vec<&Vec<SqlValue>> = self.rows.iter().collect();
        let mut right: Vec<&Vec<SqlValue>> = other.rows.iter().collect();
        left.sort_by(|a, b| cmp_rows(a, b));
        right.sort_by(|a, b| cmp_rows(a, b));
        left.iter().zip(&right).all(|(a, b)| rows_equal(a, b))
    }
}

fn cmp_rows(a: &[SqlValue], b: &[SqlValue]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    a.len().cmp(&b.len())
}

/// Why a statement did not produce rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExecError {
    /// The statement would modify the database or connection.
    Rejected(String),
    Timeout,
    Sql(String),
}

impl fmt::Display for ExecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExecError::Rejected(m) => write!(f, "rejected: {m}"),
            ExecError::Timeout => f.write_str("timed out"),
            ExecError::Sql(m) => f.write_str(m),
        }
    }
}

/// Engine abstraction used by the scorer.
pub trait SqlBackend: Send + Sync {
    type Session;

    /// Builds a fresh database from the fixture script.
    fn apply_script(&self, fixture: &DbFixture) -> Result<Self::Session>;

    /// Runs one read-only statement.
    fn execute(
        &self,
        session: &Self::Session,
        sql: &str,
        timeout: Duration,
    ) -> std::result::Result<ResultSet, ExecError>;

    /// Digest of the session's full contents, used to prove scoring never
    /// mutates a fixture.
    fn checksum(&self, session: &Self::Session) -> Result<String>;
}

/// In-memory SQLite engine.
#[derive(Debug, Clone, Copy, Default)]
pub struct SqliteBackend;

pub struct SqliteSession {
    conn: Connection,
}

impl SqlBackend for SqliteBackend {
    type Session = SqliteSession;

    fn apply_script(&self, fixture: &DbFixture) -> Result<SqliteSession> {
        let fail = |e: rusqlite::Error| Error::Fixture {
            fixture_id: fixture.fixture_id.clone(),
            message: e.to_string(),
        };
        let conn = Connection::open_in_memory().map_err(fail)?;
        conn.execute_batch(&fixture.script).map_err(fail)?;
        conn.pragma_update(None, "query_only", true).map_err(fail)?;
        conn.set_limit(Limit::SQLITE_LIMIT_ATTACHED, 0);
        conn.authorizer(Some(read_only_authorizer));
        Ok(SqliteSession { conn })
    }

    fn execute(
        &self,
        session: &SqliteSession,
        sql: &str,
        timeout: Duration,
    ) -> std::result::Result<ResultSet, ExecError> {
        if sql.trim().is_empty() {
            return Err(ExecError::Sql("empty statement".into()));
        }
        let conn = &session.conn;
        let deadline = Instant::now() + timeout;
        conn.progress_handler(1_000, Some(move || Instant::now() >= deadline));
        let result = run_query(conn, sql, deadline);
        conn.progress_handler(0, None::<fn() -> bool>);
        result
    }

    fn checksum(&self, session: &SqliteSession) -> Result<String> {
        let err = |e: rusqlite::Error| Error::Fixture {
            fixture_id: "<session>".into(),
            message: e.to_string(),
        };
        let conn = &session.conn;
        let mut hasher = Sha256::new();
        let mut stmt = conn
            .prepare("SELECT type, name, COALESCE(sql, '') FROM sqlite_master ORDER BY type, name")
            .map_err(err)?;
        let objects: Vec<(String, String, String)> = stmt
            .query_map([], |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?)))
            .map_err(err)?
            .collect::<rusqlite::Result<_>>()
            .map_err(err)?;
        for (kind, name, sql) in &objects {
            hasher.update(format!("{kind}\0{name}\0{sql}\n"));
            if kind != "table" {
                continue;
            }
            let query = format!("SELECT * FROM \"{}\"", name.replace('"', "\"\""));
            let rows = run_query(conn, &query, Instant::now() + Duration::from_secs(60))
                .map_err(|e| Error::Fixture {
                    fixture_id: "<session>".into(),
                    message: e.to_string(),
                })?;
            let mut rendered: Vec<String> = rows
                .rows
                .iter()
                .map(|row| row.iter().map(ToString::to_string).collect::<Vec<_>>().join("\t"))
                .collect();
            rendered.sort();
            for line in rendered {
                hasher.update(line);
                hasher.update("\n");
            }
        }
        Ok(hex::encode(hasher.finalize()))
    }
}

fn read_only_authorizer(ctx: AuthContext<'_>) -> Authorization {
    match ctx.action {
        AuthAction::Select
        | AuthAction::Read { .. }
        | AuthAction::Function { .. }
        | AuthAction::Recursive => Authorization::Allow,
        _ => Authorization::Deny,
    }
}

fn run_query(
    conn: &Connection,
    sql: &str,
    deadline: Instant,
) -> std::result::Result<ResultSet, ExecError> {
    let classify = |e: rusqlite::Error| {
        if Instant::now() >= deadline {
            return ExecError::Timeout;
        }
        match e {
            rusqlite::Error::SqliteFailure(f, _) if f.code == rusqlite::ErrorCode::OperationInterrupted => {
                ExecError::Timeout
            }
            rusqlite::Error::SqliteFailure(f, _)
                if matches!(
                    f.code,
                    rusqlite::ErrorCode::ReadOnly | rusqlite::ErrorCode::AuthorizationForStatementDenied
                ) =>
            {
                ExecError::Rejected(e.to_string())
            }
            other => ExecError::Sql(other.to_string()),
        }
    };
    let mut batch = Batch::new(conn, sql);
    let Some(mut stmt) = batch.next().map_err(classify)? else {
        return Err(ExecError::Sql("empty statement".into()));
    };
    if batch.next().map_err(classify)?.is_some() {
        return Err(ExecError::Sql("more than one statement".into()));
    }
    if !stmt.readonly() {
        return Err(ExecError::Rejected("statement is not read-only".into()));
    }
    let columns = stmt.column_count();
    let mut rows = stmt.query([]).map_err(classify)?;
    let mut out = Vec::new();
    while let Some(row) = rows.next().map_err(classify)? {
        let mut values = Vec::with_capacity(columns);
        for i in 0..columns {
            let v = match row.get_ref(i).map_err(classify)? {
                ValueRef::Null => SqlValue::Null,
                ValueRef::Integer(i) => SqlValue::Integer(i),
                ValueRef::Real(r) => SqlValue::Real(r),
                ValueRef::Text(t) => SqlValue::Text(String::from_utf8_lossy(t).into_owned()),
                ValueRef::Blob(b) => SqlValue::Blob(b.to_vec()),
            };
            values.push(v);
        }
        out.push(values);
    }
    Ok(ResultSet { columns, rows: out })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> DbFixture {
        DbFixture::new(
            "t",
            "CREATE TABLE t(a INTEGER, b TEXT); INSERT INTO t VALUES (1, 'x'), (2, 'y');",
        )
    }

    fn exec(sql: &str) -> std::result::Result<ResultSet, ExecError> {
        let backend = SqliteBackend;
        let session = backend.apply_script(&fixture()).unwrap();
        backend.execute(&session, sql, Duration::from_secs(2))
    }

    #[test]
    fn basic_select() {
        let rs = exec("SELECT a, b FROM t ORDER BY a").unwrap();
        assert_eq!(rs.columns, 2);
        assert_eq!(rs.rows[1], vec![SqlValue::Integer(2), SqlValue::Text("y".into())]);
    }

    #[test]
    fn writes_are_rejected() {
        for sql in [
            "DELETE FROM t",
            "INSERT INTO t VALUES (3, 'z')",
            "DROP TABLE t",
            "CREATE TABLE u(x)",
            "PRAGMA query_only = 0",
        ] {
            assert!(exec(sql).is_err(), "{sql} should fail");
        }
        assert!(exec("ATTACH DATABASE ':memory:' AS other").is_err());
    }

    #[test]
    fn multiple_statements_fail() {
        assert!(exec("SELECT 1; SELECT 2").is_err());
        assert!(exec("SELECT 1;").is_ok());
    }

    #[test]
    fn runaway_query_times_out() {
        let backend = SqliteBackend;
        let session = backend.apply_script(&fixture()).unwrap();
        let sql = "WITH RECURSIVE c(x) AS (SELECT 1 UNION ALL SELECT x + 1 FROM c) SELECT count(*) FROM c";
        let started = Instant::now();
        let res = backend.execute(&session, sql, Duration::from_millis(100));
        assert_eq!(res, Err(ExecError::Timeout));
        assert!(started.elapsed() < Duration::from_secs(5));
        // The session stays usable afterwards.
        assert!(backend.execute(&session, "SELECT 1", Duration::from_secs(1)).is_ok());
    }

    #[test]
    fn bad_fixture_is_fixture_error() {
        let err = SqliteBackend
            .apply_script(&DbFixture::new("bad", "CREATE TABLE"))
            .err()
            .unwrap();
        assert!(matches!(err, Error::Fixture { fixture_id, .. } if fixture_id == "bad"));
    }

    #[test]
    fn numeric_unification_and_multiset() {
        let a = ResultSet {
            columns: 1,
            rows: vec![vec![SqlValue::Integer(2)], vec![SqlValue::Real(1.0)]],
        };
        let b = ResultSet {
            columns: 1,
            rows: vec![vec![SqlValue::Real(1.0 + 1e-12)], vec![SqlValue::Integer(2)]],
        };
        assert!(a.matches(&b, 1e-9, false));
        assert!(!a.matches(&b, 1e-9, true));
        let c = ResultSet {
            columns: 1,
            rows: vec![vec![SqlValue::Text("1".into())], vec![SqlValue::Integer(2)]],
        };
        assert!(!a.matches(&c, 1e-9, false));
    }

    #[test]
    fn duplicates_count_in_multisets() {
        let one = |v: i64| vec![SqlValue::Integer(v)];
        let a = ResultSet { columns: 1, rows: vec![one(1), one(1), one(2)] };
        let b = ResultSet { columns: 1, rows: vec![one(1), one(2), one(2)] };
        assert!(!a.matches(&b, 1e-9, false));
    }

    #[test]
    fn checksum_is_stable() {
        let backend = SqliteBackend;
        let s1 = backend.apply_script(&fixture()).unwrap();
        let s2 = backend.apply_script(&fixture()).unwrap();
        assert_eq!(backend.checksum(&s1).unwrap(), backend.checksum(&s2).unwrap());
        let other = backend
            .apply_script(&DbFixture::new("t2", "CREATE TABLE t(a INTEGER, b TEXT); INSERT INTO t VALUES (1, 'x');"))
            .unwrap();
        assert_ne!(backend.checksum(&s1).unwrap(), backend.checksum(&other).unwrap());
    }
}
