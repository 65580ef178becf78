//! Token-level helpers over policy sources.

use mico_policy::Sandbox;

/// Byte spans of identifiers outside strings and comments.
fn ident_spans(src: &str) -> Vec<(usize, usize)> {
    let b = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        let c = b[i];
        if c == b'/' && b.get(i + 1) == Some(&b'/') {
            while i < b.len() && b[i] != b'\n' {
                i += 1;
            }
        } else if c == b'/' && b.get(i + 1) == Some(&b'*') {
            let mut depth = 1;
            i += 2;
            while i < b.len() && depth > 0 {
                if b[i] == b'/' && b.get(i + 1) == Some(&b'*') {
                    depth += 1;
                    i += 1;
                } else if b[i] == b'*' && b.get(i + 1) == Some(&b'/') {
                    depth -= 1;
                    i += 1;
                }
                i += 1;
            }
        } else if matches!(c, b'"' | b'`' | b'\'') {
            i += 1;
            while i < b.len() && b[i] != c {
                if b[i] == b'\\' {
                    i += 1;
                }
                i += 1;
            }
            i += 1;
        } else if c == b'_' || c.is_ascii_alphabetic() {
            let s = i;
            while i < b.len() && (b[i] == b'_' || b[i].is_ascii_alphanumeric()) {
                i += 1;
            }
            out.push((s, i));
        } else if c.is_ascii_digit() {
            while i < b.len() && (b[i] == b'_' || b[i] == b'.' || b[i].is_ascii_alphanumeric()) {
                i += 1;
            }
        } else {
            i += 1;
        }
    }
    out
}

/// Replaces every identifier `from` with `to`, leaving strings and comments alone.
pub fn rename_ident(src: &str, from: &str, to: &str) -> String {
    let mut out = String::with_capacity(src.len());
    let mut last = 0;
    for (s, e) in ident_spans(src) {
        if &src[s..e] == from {
            out.push_str(&src[last..s]);
            out.push_str(to);
            last = e;
        }
    }
    out.push_str(&src[last..]);
    out
}

/// Names of functions declared in `src`, in order.
pub fn declared_functions(src: &str) -> Vec<&str> {
    let spans = ident_spans(src);
    spans
        .windows(2)
        .filter(|w| &src[w[0].0..w[0].1] == "fn")
        .map(|w| &src[w[1].0..w[1].1])
        .collect()
}

/// The function the sandbox would call for entry `base`: the plain name if
/// declared, otherwise the highest `base_vN`.
pub fn entry_of<'a>(src: &'a str, base: &str) -> Option<&'a str> {
    let mut best: Option<(u64, &str)> = None;
    for name in declared_functions(src) {
        let rank = if name == base {
            u64::MAX
        } else if let Some(n) = name.strip_prefix(base).and_then(|s| s.strip_prefix("_v")).and_then(|n| n.parse().ok()) {
            n
        } else {
            continue;
        };
        if best.is_none_or(|(r, _)| rank > r) {
            best = Some((rank, name));
        }
    }
    best.map(|(_, n)| n)
}

/// Byte spans of float literals such as `0.25` outside strings and comments.
pub fn float_literals(src: &str) -> Vec<(usize, usize)> {
    let b = src.as_bytes();
    let idents = ident_spans(src);
    // Re-scan digit runs that the identifier pass skipped, but only in code.
    let mut out = Vec::new();
    let mut code = vec![true; b.len()];
    mark_non_code(src, &mut code);
    let mut i = 0;
    while i < b.len() {
        let boundary = i == 0 || !(b[i - 1] == b'_' || b[i - 1].is_ascii_alphanumeric() || b[i - 1] == b'.');
        if code[i] && boundary && b[i].is_ascii_digit() && !idents.iter().any(|&(s, e)| s <= i && i < e) {
            let s = i;
            while i < b.len() && b[i].is_ascii_digit() {
                i += 1;
            }
            if i + 1 < b.len() && b[i] == b'.' && b[i + 1].is_ascii_digit() {
                i += 1;
                while i < b.len() && b[i].is_ascii_digit() {
                    i += 1;
                }
                if i >= b.len() || !(b[i].is_ascii_alphabetic() || b[i] == b'_') {
                    out.push((s, i));
                }
            }
        } else {
            i += 1;
        }
    }
    out
}

fn mark_non_code(src: &str, code: &mut [bool]) {
    let b = src.as_bytes();
    let mut i = 0;
    while i < b.len() {
        let s = i;
        let c = b[i];
        if c == b'/' && b.get(i + 1) == Some(&b'/') {
            while i < b.len() && b[i] != b'\n' {
                i += 1;
            }
        } else if c == b'/' && b.get(i + 1) == Some(&b'*') {
            let mut depth = 1;
            i += 2;
            while i < b.len() && depth > 0 {
                if b[i] == b'/' && b.get(i + 1) == Some(&b'*') {
                    depth += 1;
                    i += 1;
                } else if b[i] == b'*' && b.get(i + 1) == Some(&b'/') {
                    depth -= 1;
                    i += 1;
                }
                i += 1;
            }
        } else if matches!(c, b'"' | b'`' | b'\'') {
            i += 1;
            while i < b.len() && b[i] != c {
                if b[i] == b'\\' {
                    i += 1;
                }
                i += 1;
            }
            i += 1;
        } else {
            i += 1;
            continue;
        }
        code[s..i.min(b.len())].iter_mut().for_each(|x| *x = false);
    }
}

const MAX_SCAN_LINES: usize = 400;

/// Pulls policy code out of a model response: the first non-empty fenced
/// block, or failing that the longest run of lines that parses and declares
/// a function.
pub fn extract_code(response: &str, sandbox: &Sandbox) -> Option<String> {
    let mut rest = response;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        let body_start = after.find('\n').map_or(after.len(), |n| n + 1);
        let body = &after[body_start..];
        let (block, tail) = match body.find("```") {
            Some(close) => (&body[..close], &body[close + 3..]),
            None => (body, ""),
        };
        if !block.trim().is_empty() {
            return Some(block.trim_end().to_string() + "\n");
        }
        rest = tail;
    }

    let lines: Vec<&str> = response.lines().take(MAX_SCAN_LINES).collect();
    for len in (1..=lines.len()).rev() {
        for start in 0..=lines.len() - len {
            let region = lines[start..start + len].join("\n");
            if !declared_functions(&region).is_empty() && sandbox.parses(&region) {
                return Some(region.trim_end().to_string() + "\n");
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rename_skips_strings_and_comments() {
        let src = "fn priority(b, i) { // priority\n let s = \"priority\"; priority_x(b) + priority(b, i) }";
        let out = rename_ident(src, "priority", "p_v1");
        assert_eq!(out, "fn p_v1(b, i) { // priority\n let s = \"priority\"; priority_x(b) + p_v1(b, i) }");
    }

    #[test]
    fn entry_resolution_matches_sandbox_rule() {
        assert_eq!(entry_of("fn priority_v0(a, b) {} fn priority_v2(a, b) {}", "priority"), Some("priority_v2"));
        assert_eq!(entry_of("fn priority_v9(a, b) {} fn priority(a, b) {}", "priority"), Some("priority"));
        assert_eq!(entry_of("fn helper() {}", "priority"), None);
    }

    #[test]
    fn floats_only_in_code() {
        let src = "let a = 0.25; // 1.5\nlet b = x1.0; let s = \"2.0\"; let c = 10.75 + 3;";
        let lits: Vec<&str> = float_literals(src).into_iter().map(|(s, e)| &src[s..e]).collect();
        assert_eq!(lits, ["0.25", "10.75"]);
    }

    #[test]
    fn extraction() {
        let sb = Sandbox::default();
        let fenced = "Sure, here you go:\n```rhai\nfn priority(b, i) { 1.0 }\n```\nThis works because...";
        assert_eq!(extract_code(fenced, &sb).unwrap(), "fn priority(b, i) { 1.0 }\n");
        let bare = "The idea is simple.\nfn priority(b, i) {\n  2.0\n}\nHope it helps!";
        assert_eq!(extract_code(bare, &sb).unwrap(), "fn priority(b, i) {\n  2.0\n}\n");
        assert_eq!(extract_code("no code here at all", &sb), None);
        let empty_then_real = "```\n```\ntext\n```python\nfn priority(b, i) { 3.0 }\n```";
        assert_eq!(extract_code(empty_then_real, &sb).unwrap(), "fn priority(b, i) { 3.0 }\n");
    }
}
