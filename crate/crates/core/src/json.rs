//! Lenient extraction of a JSON object from an LLM reply.

use serde_json::{Map, Value};

/// Finds the JSON object in `text`, tolerating code fences, `//` comments,
/// `...` placeholder lines and trailing commas.
pub(crate) fn extract_object(text: &str) -> Option<Map<String, Value>> {
    let cleaned = clean(text);
    let start = cleaned.find('{')?;
    let end = cleaned.rfind('}')?;
    if end < start {
        return None;
    }
    match serde_json::from_str::<Value>(&cleaned[start..=end]) {
        Ok(Value::Object(map)) => Some(map),
        _ => None,
    }
}

fn clean(text: &str) -> String {
    drop_trailing_commas(&strip_comments(text))
}

/// Walks `text` outside string literals, letting `f` decide what to emit.
fn scan(text: &str, mut f: impl FnMut(&[char], usize, &mut String) -> usize) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut in_string = false;
    let mut escaped = false;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if in_string {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            i += 1;
        } else if c == '"' {
            in_string = true;
            out.push(c);
            i += 1;
        } else {
            i += f(&chars, i, &mut out).max(1);
        }
    }
    out
}

fn strip_comments(text: &str) -> String {
    scan(text, |chars, i, out| match chars[i] {
        '/' if chars.get(i + 1) == Some(&'/') => {
            chars[i..].iter().position(|c| *c == '\n').unwrap_or(chars.len() - i)
        }
        '.' if chars.get(i + 1) == Some(&'.') && chars.get(i + 2) == Some(&'.') => 3,
        c => {
            out.push(c);
            1
        }
    })
}

fn drop_trailing_commas(text: &str) -> String {
    scan(text, |chars, i, out| {
        let c = chars[i];
        let next = chars[i + 1..].iter().find(|c| !c.is_whitespace());
        if c != ',' || !matches!(next, Some('}') | Some(']')) {
            out.push(c);
        }
        1
    })
}
