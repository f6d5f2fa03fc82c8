use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

/// Decimal places kept for REAL cells.
pub const REAL_DECIMALS: i32 = 6;

/// A normalized result cell.
///
/// REAL values are rounded to [`REAL_DECIMALS`] places and collapse to
/// `Int` when integral, so `2.0` and `2` are the same cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "t", content = "v", rename_all = "lowercase")]
pub enum Cell {
    Null,
    Int(i64),
    Real(f64),
    Text(String),
    Blob(Vec<u8>),
}

impl Cell {
    pub fn from_real(x: f64) -> Cell {
        if !x.is_finite() {
            return Cell::Real(x);
        }
        let scale = 10f64.powi(REAL_DECIMALS);
        let rounded = (x * scale).round() / scale;
        if rounded.fract() == 0.0 && rounded.abs() < 9.0e15 {
            Cell::Int(rounded as i64)
        } else {
            Cell::Real(rounded)
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Cell::Null => 0,
            Cell::Int(_) | Cell::Real(_) => 1,
            Cell::Text(_) => 2,
            Cell::Blob(_) => 3,
        }
    }

    fn write_canonical(&self, out: &mut Vec<u8>) {
        match self {
            Cell::Null => out.push(0),
            Cell::Int(i) => {
                out.push(1);
                out.extend_from_slice(&i.to_be_bytes());
            }
            Cell::Real(r) => {
                out.push(2);
                out.extend_from_slice(&r.to_bits().to_be_bytes());
            }
            Cell::Text(s) => {
                out.push(3);
                out.extend_from_slice(&(s.len() as u64).to_be_bytes());
                out.extend_from_slice(s.as_bytes());
            }
            Cell::Blob(b) => {
                out.push(4);
                out.extend_from_slice(&(b.len() as u64).to_be_bytes());
                out.extend_from_slice(b);
            }
        }
    }

    /// Python-literal style rendering, as shown to models in merge prompts.
    pub fn render(&self) -> String {
        match self {
            Cell::Null => "None".to_string(),
            Cell::Int(i) => i.to_string(),
            Cell::Real(r) => format!("{r:?}"),
            Cell::Text(s) => {
                let escaped = s.replace('\\', "\\\\").replace('\'', "\\'").replace('\n', "\\n");
                format!("'{escaped}'")
            }
            Cell::Blob(b) => format!("X'{}'", hex::encode(b)),
        }
    }
}

impl PartialEq for Cell {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Cell {}

impl PartialOrd for Cell {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cell {
    /// NULL < numbers < text < blobs; numbers compare by value, Int before
    /// Real on exact ties (which normalization never produces).
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Cell::Int(a), Cell::Int(b)) => a.cmp(b),
            (Cell::Real(a), Cell::Real(b)) => a.total_cmp(b),
            (Cell::Int(a), Cell::Real(b)) => (*a as f64).total_cmp(b).then(Ordering::Less),
            (Cell::Real(a), Cell::Int(b)) => a.total_cmp(&(*b as f64)).then(Ordering::Greater),
            (Cell::Text(a), Cell::Text(b)) => a.cmp(b),
            (Cell::Blob(a), Cell::Blob(b)) => a.cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

/// SHA-256 of a fingerprint's canonical bytes.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest(pub [u8; 32]);

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &hex::encode(self.0)[..12])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl Serialize for Digest {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(self.0))
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let bytes = hex::decode(&s).map_err(serde::de::Error::custom)?;
        let arr: [u8; 32] = bytes.try_into().map_err(|_| serde::de::Error::custom("digest must be 32 bytes"))?;
        Ok(Digest(arr))
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("ragged rows: row {row} has {found} columns, expected {expected}")]
pub struct RaggedRows {
    pub row: usize,
    pub expected: usize,
    pub found: usize,
}

/// Canonical, comparable form of a result set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultFingerprint {
    pub column_count: usize,
    /// Rows in canonical order (sorted unless `ordered`).
    pub rows: Vec<Vec<Cell>>,
    /// Row order is significant for this fingerprint.
    #[serde(default)]
    pub ordered: bool,
    pub digest: Digest,
}

impl ResultFingerprint {
    fn build(column_count: usize, rows: Vec<Vec<Cell>>, ordered: bool) -> Self {
        let mut bytes = Vec::with_capacity(16 + rows.len() * column_count * 9);
        bytes.push(ordered as u8);
        bytes.extend_from_slice(&(column_count as u64).to_be_bytes());
        bytes.extend_from_slice(&(rows.len() as u64).to_be_bytes());
        for row in &rows {
            for cell in row {
                cell.write_canonical(&mut bytes);
            }
        }
        let digest = Digest(Sha256::digest(&bytes).into());
        ResultFingerprint {
            column_count,
            rows,
            ordered,
            digest,
        }
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }
}

fn check_arity(rows: &[Vec<Cell>], column_count: Option<usize>) -> Result<usize, RaggedRows> {
    let expected = column_count.or_else(|| rows.first().map(Vec::len)).unwrap_or(0);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != expected {
            return Err(RaggedRows {
                row: i,
                expected,
                found: row.len(),
            });
        }
    }
    Ok(expected)
}

fn renormalize(rows: Vec<Vec<Cell>>) -> Vec<Vec<Cell>> {
    rows.into_iter()
        .map(|row| {
            row.into_iter()
                .map(|c| match c {
                    Cell::Real(r) => Cell::from_real(r),
                    other => other,
                })
                .collect()
        })
        .collect()
}

/// Normalize raw rows into a multiset fingerprint (row order ignored).
pub fn normalize_rows(rows: Vec<Vec<Cell>>) -> Result<ResultFingerprint, RaggedRows> {
    normalize_rows_with(rows, None, false)
}

/// As [`normalize_rows`], with an explicit column count (needed for empty
/// results) and optional row-order sensitivity.
pub fn normalize_rows_with(rows: Vec<Vec<Cell>>, column_count: Option<usize>, ordered: bool) -> Result<ResultFingerprint, RaggedRows> {
    let column_count = check_arity(&rows, column_count)?;
    let mut rows = renormalize(rows);
    if !ordered {
        rows.sort();
    }
    Ok(ResultFingerprint::build(column_count, rows, ordered))
}
