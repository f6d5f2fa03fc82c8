//! Small lexical helpers for locating SQL inside free-form model text.
//!
//! None of this parses SQL. It finds statement boundaries well enough to pull
//! a query out of a chain-of-thought or an untagged completion.

use std::ops::Range;

/// A SQL statement found inside a larger text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocatedSql {
    /// Byte span of the whole construct, fences included when fenced.
    pub span: Range<usize>,
    /// The statement itself, trimmed, without fences.
    pub sql: String,
    pub fenced: bool,
}

/// Collapse every whitespace run to a single space and trim the ends.
pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// First keyword of a statement, uppercased. Leading whitespace, parentheses
/// and SQL comments are skipped.
pub fn first_keyword(sql: &str) -> Option<String> {
    let mut rest = sql;
    loop {
        rest = rest.trim_start();
        if let Some(r) = rest.strip_prefix("--") {
            rest = r.split_once('\n').map(|(_, tail)| tail).unwrap_or("");
        } else if let Some(r) = rest.strip_prefix("/*") {
            rest = r.split_once("*/").map(|(_, tail)| tail).unwrap_or("");
        } else if let Some(r) = rest.strip_prefix('(') {
            rest = r;
        } else {
            break;
        }
    }
    let word: String = rest.chars().take_while(|c| c.is_ascii_alphanumeric() || *c == '_').collect();
    if word.is_empty() {
        None
    } else {
        Some(word.to_ascii_uppercase())
    }
}

/// True when the text, after leading whitespace, begins with the SELECT keyword.
pub fn starts_with_select(sql: &str) -> bool {
    let t = sql.trim_start();
    t.len() >= 6 && t[..6].eq_ignore_ascii_case("select") && !t[6..].chars().next().is_some_and(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Remove a surrounding markdown code fence (```sql ... ```) if present.
pub fn strip_fences(s: &str) -> String {
    let t = s.trim();
    let Some(body) = t.strip_prefix("```") else {
        return t.replace("```", "").trim().to_string();
    };
    // drop the info string (e.g. "sql") on the opening line
    let body = match body.split_once('\n') {
        Some((info, rest)) if !info.trim().contains(' ') => rest,
        _ => {
            let lower = body.to_ascii_lowercase();
            if lower.starts_with("sqlite") {
                &body[6..]
            } else if lower.starts_with("sql") && !lower.starts_with("sql_") {
                &body[3..]
            } else {
                body
            }
        }
    };
    let body = body.trim_end();
    let body = body.strip_suffix("```").unwrap_or(body);
    body.replace("```", "").trim().to_string()
}

struct Fence {
    span: Range<usize>,
    info: String,
    body: Range<usize>,
}

fn fenced_blocks(text: &str) -> Vec<Fence> {
    let mut out = Vec::new();
    let mut pos = 0;
    while let Some(open_rel) = text[pos..].find("```") {
        let open = pos + open_rel;
        let after_ticks = open + 3;
        let line_end = text[after_ticks..].find('\n').map(|i| after_ticks + i).unwrap_or(text.len());
        let info_candidate = text[after_ticks..line_end].trim();
        // "```sql SELECT ..." on one line: treat the word as info, the rest as body
        let (info, body_start) = if info_candidate.contains("```") {
            (String::new(), after_ticks)
        } else if info_candidate.chars().all(|c| c.is_ascii_alphanumeric()) {
            (info_candidate.to_ascii_lowercase(), (line_end + 1).min(text.len()))
        } else {
            let word: String = info_candidate.chars().take_while(|c| c.is_ascii_alphabetic()).collect();
            if word.eq_ignore_ascii_case("sql") {
                let skip = text[after_ticks..].find(&word).unwrap_or(0) + word.len();
                ("sql".to_string(), after_ticks + skip)
            } else {
                (String::new(), after_ticks)
            }
        };
        let Some(close_rel) = text[body_start..].find("```") else {
            break;
        };
        let close = body_start + close_rel;
        out.push(Fence {
            span: open..close + 3,
            info,
            body: body_start..close,
        });
        pos = close + 3;
    }
    out
}

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

/// Byte offsets of every standalone SELECT keyword (case-insensitive).
fn select_positions(text: &str) -> Vec<usize> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i + 6 <= bytes.len() {
        if bytes[i..i + 6].eq_ignore_ascii_case(b"select")
            && (i == 0 || !is_word_byte(bytes[i - 1]))
            && (i + 6 == bytes.len() || !is_word_byte(bytes[i + 6]))
        {
            out.push(i);
            i += 6;
        } else {
            i += 1;
        }
    }
    out
}

/// True when the SELECT at `pos` opens a statement rather than a subquery
/// or the right arm of a compound query.
fn opens_statement(text: &str, pos: usize) -> bool {
    let before = text[..pos].trim_end();
    if before.ends_with('(') {
        return false;
    }
    let word: String = before
        .chars()
        .rev()
        .take_while(|c| c.is_ascii_alphanumeric() || *c == '_')
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    !["UNION", "ALL", "INTERSECT", "EXCEPT"].iter().any(|k| word.eq_ignore_ascii_case(k))
}

/// End of an unfenced statement starting at `start`: just past the first
/// `;`, else the first blank line or tag opener, else end of text.
fn statement_end(text: &str, start: usize) -> usize {
    let rest = &text[start..];
    let mut end = rest.len();
    if let Some(i) = rest.find(';') {
        end = end.min(i + 1);
    }
    if let Some(i) = rest.find("\n\n") {
        end = end.min(i);
    }
    if let Some(i) = rest.find("\r\n\r\n") {
        end = end.min(i);
    }
    // "<" is also a comparison operator; only tags end a statement
    if let Some((i, _)) = rest
        .match_indices('<')
        .find(|(i, _)| rest[*i..].starts_with("</") || rest[*i..].starts_with("<answer"))
    {
        end = end.min(i);
    }
    start + end
}

/// Locate the final SQL statement in `text`.
///
/// Fenced blocks win: the last block tagged `sql` (or, failing that, the last
/// untagged block). Without fences, the last SELECT that opens a statement
/// (not a subquery or compound arm) is taken, ending at its first semicolon,
/// blank line or tag.
pub fn locate_final_sql(text: &str) -> Option<LocatedSql> {
    let fences = fenced_blocks(text);
    let fence = fences
        .iter()
        .rev()
        .find(|f| f.info == "sql" || f.info == "sqlite")
        .or_else(|| fences.iter().rev().find(|f| f.info.is_empty()));
    if let Some(f) = fence {
        let sql = text[f.body.clone()].trim().to_string();
        if !sql.is_empty() {
            return Some(LocatedSql {
                span: f.span.clone(),
                sql,
                fenced: true,
            });
        }
    }
    let start = select_positions(text).into_iter().rev().find(|&p| opens_statement(text, p))?;
    let end = statement_end(text, start);
    let sql = text[start..end].trim().to_string();
    Some(LocatedSql {
        span: start..end,
        sql,
        fenced: false,
    })
}

/// Count non-overlapping occurrences of `needle` in `haystack`.
pub fn count_occurrences(haystack: &str, needle: &str) -> usize {
    if needle.is_empty() {
        return 0;
    }
    haystack.matches(needle).count()
}
