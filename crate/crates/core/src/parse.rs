//! Parsers for the semi-structured text that language models return.
//!
//! Every parser either yields the documented normalization or a
//! [`ParseError`]; none of them guesses when the format is absent.

use serde_json::Value;
use thiserror::Error;

use crate::types::name_key;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("no list items found")]
    NoItems,
    #[error("no *delimited* answer found")]
    NoSpan,
    #[error("no structured object found: {0}")]
    MalformedObject(String),
    #[error("hierarchy is missing level {0}")]
    MissingLevel(u8),
    #[error("hierarchy level {0} is empty")]
    EmptyLevel(u8),
    #[error("hierarchy level {0} is not a flat list of names")]
    NotFlat(u8),
    #[error("expected {expected} fields, found {found}")]
    FieldCount { expected: usize, found: usize },
    #[error("answer lacks the required wording: {0}")]
    MissingInstruction(String),
}

const QUOTES: &[char] = &['"', '\'', '`', '\u{201c}', '\u{201d}', '\u{2018}', '\u{2019}'];
const TRAILING: &[char] = &['.', ',', ';', ':', '!'];

/// Strips markdown emphasis, surrounding quotes and trailing punctuation.
pub fn clean_item(s: &str) -> String {
    let mut cur = s.trim().to_string();
    loop {
        let before = cur.clone();
        cur = cur.trim().trim_end_matches(TRAILING).trim().to_string();
        if let Some(inner) = cur.strip_prefix("**").and_then(|x| x.strip_suffix("**")) {
            cur = inner.to_string();
        }
        if cur.starts_with("__") && cur.ends_with("__") && cur.len() >= 4 {
            cur = cur[2..cur.len() - 2].to_string();
        }
        let first = cur.chars().next();
        let last = cur.chars().last();
        if let (Some(f), Some(l)) = (first, last) {
            if cur.chars().count() >= 2 && QUOTES.contains(&f) && QUOTES.contains(&l) {
                let mut chars = cur.chars();
                chars.next();
                chars.next_back();
                cur = chars.as_str().to_string();
            }
        }
        if cur == before {
            break;
        }
    }
    cur.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Returns the text after a list marker (`*`, `-`, `•`, `N.` or `N)`), if any.
fn strip_marker(line: &str) -> Option<&str> {
    let t = line.trim();
    for m in ["*", "-", "\u{2022}", "+"] {
        if let Some(rest) = t.strip_prefix(m) {
            return Some(rest);
        }
    }
    let digits = t.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 && digits <= 3 {
        let rest = &t[digits..];
        if let Some(r) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            if r.is_empty() || r.starts_with(char::is_whitespace) {
                return Some(r);
            }
        }
    }
    None
}

/// Removes an echoed `Criterion N:` label and reduces `**Name**: gloss` to `Name`.
fn reduce_label(item: &str) -> String {
    let mut s = item.trim();
    if let Some(rest) = strip_ci_prefix(s, "criterion") {
        let rest = rest.trim_start();
        let digits = rest.chars().take_while(char::is_ascii_digit).count();
        let after = rest[digits..].trim_start();
        if digits > 0 {
            if let Some(tail) = after.strip_prefix(':') {
                s = tail.trim();
            }
        }
    }
    if let Some(rest) = s.strip_prefix("**") {
        if let Some(end) = rest.find("**") {
            let head = &rest[..end];
            let tail = rest[end + 2..].trim_start();
            if tail.is_empty() || tail.starts_with(':') || tail.starts_with('-') || tail.starts_with('\u{2013}') {
                return head.to_string();
            }
        }
    }
    s.to_string()
}

/// Items of a bulleted or numbered list, in order.
///
/// Lines without a marker (preambles, closing remarks) are ignored. Fails
/// when nothing survives.
pub fn parse_bulleted_list(text: &str) -> Result<Vec<String>, ParseError> {
    let items: Vec<String> = text
        .lines()
        .filter_map(strip_marker)
        .map(|rest| clean_item(&reduce_label(&clean_item(rest))))
        .filter(|s| !s.is_empty() && s.chars().any(char::is_alphanumeric))
        .collect();
    if items.is_empty() {
        Err(ParseError::NoItems)
    } else {
        Ok(items)
    }
}

/// Case-insensitive dedup keeping first occurrences.
pub fn dedup_names(names: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    names.into_iter().filter(|n| seen.insert(name_key(n))).collect()
}

/// The first non-empty `*...*` span (also `**...**`).
///
/// A response that is a single `* name` bullet line is accepted too, since
/// models often drop the closing asterisk.
pub fn extract_asterisk_span(text: &str) -> Result<String, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        if chars[i] == '*' {
            let mut start = i;
            while start < chars.len() && chars[start] == '*' {
                start += 1;
            }
            let mut end = start;
            while end < chars.len() && chars[end] != '*' && chars[end] != '\n' {
                end += 1;
            }
            if end < chars.len() && chars[end] == '*' {
                let inner: String = chars[start..end].iter().collect();
                let cleaned = clean_item(&inner);
                if cleaned.chars().any(char::is_alphanumeric) {
                    return Ok(cleaned);
                }
                i = end;
                continue;
            }
            i = end;
        } else {
            i += 1;
        }
    }
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if lines.len() == 1 {
        if let Some(rest) = lines[0].trim().strip_prefix('*') {
            let cleaned = clean_item(rest);
            if cleaned.chars().any(char::is_alphanumeric) {
                return Ok(cleaned);
            }
        }
    }
    Err(ParseError::NoSpan)
}

/// Keeps at most `max_words` words; the flag reports whether anything was cut.
pub fn truncate_words(name: &str, max_words: usize) -> (String, bool) {
    let words: Vec<&str> = name.split_whitespace().collect();
    if words.len() <= max_words {
        (words.join(" "), false)
    } else {
        (words[..max_words].join(" "), true)
    }
}

/// The first balanced `{...}` in `text`, preferring a fenced code block.
fn find_object(text: &str) -> Option<&str> {
    let scope = match text.find("```") {
        Some(open) => {
            let after = &text[open + 3..];
            let body_start = after.find('\n').map_or(0, |n| n + 1);
            let body = &after[body_start..];
            match body.find("```") {
                Some(close) => &body[..close],
                None => body,
            }
        }
        None => text,
    };
    let scope = if scope.contains('{') { scope } else { text };
    let start = scope.find('{')?;
    let mut depth = 0i32;
    let mut in_str = false;
    let mut escaped = false;
    for (off, ch) in scope[start..].char_indices() {
        if in_str {
            match ch {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match ch {
            '"' => in_str = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&scope[start..start + off + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

fn strip_trailing_commas(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let chars: Vec<char> = s.chars().collect();
    let mut in_str = false;
    let mut escaped = false;
    for (i, &ch) in chars.iter().enumerate() {
        if in_str {
            out.push(ch);
            match ch {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_str = false,
                _ => {}
            }
            continue;
        }
        if ch == '"' {
            in_str = true;
        }
        if ch == ',' {
            let next = chars[i + 1..].iter().find(|c| !c.is_whitespace());
            if matches!(next, Some('}') | Some(']')) {
                continue;
            }
        }
        out.push(ch);
    }
    out
}

/// Parses a JSON object found anywhere in `text` (tolerating code fences and
/// trailing commas).
pub fn parse_json_object(text: &str) -> Result<serde_json::Map<String, Value>, ParseError> {
    let raw = find_object(text).ok_or_else(|| ParseError::MalformedObject("no braces".into()))?;
    let value: Value = serde_json::from_str(raw)
        .or_else(|_| serde_json::from_str(&strip_trailing_commas(raw)))
        .map_err(|e| ParseError::MalformedObject(e.to_string()))?;
    match value {
        Value::Object(map) => Ok(map),
        _ => Err(ParseError::MalformedObject("not an object".into())),
    }
}

fn level_number(key: &str) -> Option<u8> {
    let k: String = key
        .chars()
        .filter(|c| !c.is_whitespace() && *c != '_' && *c != '-')
        .collect::<String>()
        .to_lowercase();
    let digits = k.strip_prefix("level").unwrap_or(&k);
    match digits {
        "1" => Some(1),
        "2" => Some(2),
        "3" => Some(3),
        _ => None,
    }
}

fn flat_names(value: &Value, level: u8) -> Result<Vec<String>, ParseError> {
    let arr = value.as_array().ok_or(ParseError::NotFlat(level))?;
    let mut names = Vec::with_capacity(arr.len());
    for v in arr {
        let s = v.as_str().ok_or(ParseError::NotFlat(level))?;
        let c = clean_item(s);
        if !c.is_empty() {
            names.push(c);
        }
    }
    let names = dedup_names(names);
    if names.is_empty() {
        return Err(ParseError::EmptyLevel(level));
    }
    Ok(names)
}

/// Three flat name lists keyed `level 1` / `level 2` / `level 3`
/// (case, spaces and underscores ignored), returned coarse → fine.
pub fn parse_hierarchy(text: &str) -> Result<[Vec<String>; 3], ParseError> {
    let map = parse_json_object(text)?;
    let mut levels: [Option<Vec<String>>; 3] = [None, None, None];
    for (key, value) in &map {
        if let Some(n) = level_number(key) {
            levels[(n - 1) as usize] = Some(flat_names(value, n)?);
        }
    }
    let [a, b, c] = levels;
    Ok([
        a.ok_or(ParseError::MissingLevel(1))?,
        b.ok_or(ParseError::MissingLevel(2))?,
        c.ok_or(ParseError::MissingLevel(3))?,
    ])
}

fn strip_ci_prefix<'a>(s: &'a str, prefix: &str) -> Option<&'a str> {
    let head = s.get(..prefix.len())?;
    head.eq_ignore_ascii_case(prefix).then(|| &s[prefix.len()..])
}

/// An `(abstract, common, specific)` answer triple.
///
/// Fields may be separated by newlines, semicolons or commas (checked in
/// that order). An `Answer:` prefix and per-field labels are dropped.
pub fn parse_vqa_triple(text: &str) -> Result<[String; 3], ParseError> {
    let mut body = text.trim();
    for p in ["answer:", "a:"] {
        if let Some(rest) = strip_ci_prefix(body, p) {
            body = rest.trim();
        }
    }
    let lines: Vec<&str> = body.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    let raw: Vec<&str> = if lines.len() > 1 {
        lines
    } else if body.contains(';') {
        body.split(';').collect()
    } else {
        body.split(',').collect()
    };
    let fields: Vec<String> = raw
        .into_iter()
        .map(|f| {
            let f = strip_marker(f).unwrap_or(f).trim();
            let mut f = f;
            for label in ["abstract:", "common:", "specific:", "coarse:", "mid:", "fine:"] {
                if let Some(rest) = strip_ci_prefix(f, label) {
                    f = rest.trim();
                }
            }
            clean_item(f)
        })
        .filter(|f| !f.is_empty())
        .collect();
    if fields.len() != 3 {
        return Err(ParseError::FieldCount { expected: 3, found: fields.len() });
    }
    let mut it = fields.into_iter();
    Ok([it.next().unwrap(), it.next().unwrap(), it.next().unwrap()])
}

/// Names separated by `&` (newlines also split), numbering stripped,
/// deduplicated and capped at `cap`.
///
/// A single segment without any `&` is treated as prose, not as a one-name
/// list.
pub fn parse_ampersand_list(text: &str, cap: usize) -> Result<Vec<String>, ParseError> {
    let names: Vec<String> = text
        .split(['&', '\n'])
        .map(|part| {
            let mut p = part.trim();
            if let Some(rest) = strip_ci_prefix(p, "your response:") {
                p = rest.trim();
            }
            clean_item(strip_marker(p).unwrap_or(p))
        })
        .filter(|s| !s.is_empty() && s.chars().any(char::is_alphanumeric))
        .collect();
    if names.len() == 1 && !text.contains('&') {
        return Err(ParseError::MissingInstruction("no `&` separator".into()));
    }
    let mut out = dedup_names(names);
    out.truncate(cap);
    if out.is_empty() {
        Err(ParseError::NoItems)
    } else {
        Ok(out)
    }
}
