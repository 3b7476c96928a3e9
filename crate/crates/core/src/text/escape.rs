//! Escaping for symbols stored one-per-line or space-separated in text files.
//! `\s` is a space, `\t` a tab, `\n` a newline, `\r` a carriage return and
//! `\\` a backslash.

use crate::error::{Error, Result};

pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            ' ' => out.push_str("\\s"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\\' => out.push_str("\\\\"),
            c => out.push(c),
        }
    }
    out
}

pub fn unescape(s: &str) -> Result<String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('s') => out.push(' '),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('\\') => out.push('\\'),
            other => {
                return Err(Error::Data(format!(
                    "bad escape sequence \\{} in {s:?}",
                    other.map(String::from).unwrap_or_default()
                )))
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        for s in [" a", "\\s", "tab\there", "", "x\ny\r"] {
            let e = escape(s);
            assert!(!e.contains(' ') && !e.contains('\n'));
            assert_eq!(unescape(&e).unwrap(), s);
        }
        assert!(unescape("\\q").is_err());
    }
}
