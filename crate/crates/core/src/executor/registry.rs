use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("database manifest not found: {0}")]
    MissingManifest(PathBuf),
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest {path}, line {line}: {message}")]
    Malformed { path: PathBuf, line: usize, message: String },
    #[error("database '{db_id}' is not readable at {path}: {reason}")]
    Unreadable { db_id: String, path: PathBuf, reason: String },
    #[error("duplicate database id '{0}'")]
    Duplicate(String),
    #[error("unknown database id '{0}'")]
    UnknownDatabase(String),
}

/// A registered SQLite database file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatabaseRef {
    pub db_id: String,
    pub path: PathBuf,
}

/// db_id → database file mapping, validated at registration.
#[derive(Debug, Clone, Default)]
pub struct DatabaseRegistry {
    dbs: BTreeMap<String, DatabaseRef>,
}

impl DatabaseRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, db_id: impl Into<String>, path: impl Into<PathBuf>) -> Result<(), RegistryError> {
        let db_id = db_id.into();
        let path = path.into();
        if self.dbs.contains_key(&db_id) {
            return Err(RegistryError::Duplicate(db_id));
        }
        if let Err(e) = fs::File::open(&path) {
            return Err(RegistryError::Unreadable {
                db_id,
                path,
                reason: e.to_string(),
            });
        }
        if !path.is_file() {
            return Err(RegistryError::Unreadable {
                db_id,
                path,
                reason: "not a regular file".into(),
            });
        }
        self.dbs.insert(db_id.clone(), DatabaseRef { db_id, path });
        Ok(())
    }

    pub fn get(&self, db_id: &str) -> Result<&DatabaseRef, RegistryError> {
        self.dbs.get(db_id).ok_or_else(|| RegistryError::UnknownDatabase(db_id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.dbs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dbs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &DatabaseRef> {
        self.dbs.values()
    }

    /// Load a manifest: either a JSON object `{"db_id": "path", ...}` or a
    /// text file with one `db_id path` pair per line (`#` starts a comment).
    /// Relative paths resolve against the manifest's directory.
    pub fn from_manifest(path: &Path) -> Result<Self, RegistryError> {
        if !path.exists() {
            return Err(RegistryError::MissingManifest(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|source| RegistryError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let entries = parse_manifest(&text).map_err(|(line, message)| RegistryError::Malformed {
            path: path.to_path_buf(),
            line,
            message,
        })?;
        let mut reg = DatabaseRegistry::new();
        for (id, p) in entries {
            let p = PathBuf::from(p);
            let resolved = if p.is_absolute() { p } else { base.join(p) };
            reg.register(id, resolved)?;
        }
        Ok(reg)
    }
}

fn parse_manifest(text: &str) -> Result<Vec<(String, String)>, (usize, String)> {
    if text.trim_start().starts_with('{') {
        let map: BTreeMap<String, String> = serde_json::from_str(text).map_err(|e| (e.line(), e.to_string()))?;
        return Ok(map.into_iter().collect());
    }
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (id, p) = line
            .split_once(|c: char| c.is_whitespace() || c == '=')
            .ok_or((i + 1, "expected `db_id path`".to_string()))?;
        let p = p.trim().trim_start_matches('=').trim();
        if id.is_empty() || p.is_empty() {
            return Err((i + 1, "expected `db_id path`".to_string()));
        }
        out.push((id.to_string(), p.to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_line_manifest() {
        let m = parse_manifest("# dbs\nschools dbs/schools.sqlite\nmovies=movies.db\n\n").unwrap();
        assert_eq!(
            m,
            vec![
                ("schools".to_string(), "dbs/schools.sqlite".to_string()),
                ("movies".to_string(), "movies.db".to_string())
            ]
        );
    }

    #[test]
    fn parses_json_manifest() {
        let m = parse_manifest(r#"{"b": "/x/b.db", "a": "a.db"}"#).unwrap();
        assert_eq!(m[0].0, "a");
        assert_eq!(m[1].1, "/x/b.db");
    }

    #[test]
    fn rejects_line_without_path() {
        assert_eq!(parse_manifest("lonely\n").unwrap_err().0, 1);
    }

    #[test]
    fn missing_manifest_reported() {
        let err = DatabaseRegistry::from_manifest(Path::new("/nonexistent/manifest.txt")).unwrap_err();
        assert!(matches!(err, RegistryError::MissingManifest(_)));
    }

    #[test]
    fn manifest_paths_resolve_relative_to_manifest() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.sqlite"), b"").unwrap();
        fs::write(dir.path().join("m.txt"), "a a.sqlite\n").unwrap();
        let reg = DatabaseRegistry::from_manifest(&dir.path().join("m.txt")).unwrap();
        assert_eq!(reg.get("a").unwrap().path, dir.path().join("a.sqlite"));
        assert!(matches!(reg.get("zzz"), Err(RegistryError::UnknownDatabase(_))));
    }

    #[test]
    fn missing_database_file_rejected() {
        let mut reg = DatabaseRegistry::new();
        let err = reg.register("x", "/nonexistent/x.sqlite").unwrap_err();
        assert!(matches!(err, RegistryError::Unreadable { .. }));
    }
}
