//! Line-oriented section format shared by robot descriptions and task files.
//!
//! ```text
//! # comment
//! [kind name]        # section header; the name is optional for some kinds
//! key = value tokens # entries belong to the most recent header
//! ```
//!
//! Numeric lists are whitespace separated. `v*n` repeats `v` `n` times, `inf` and
//! `-inf` are accepted, NaN is rejected.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub kind: String,
    pub name: Option<String>,
    pub line: usize,
    pub entries: Vec<Entry>,
}

const MAX_REPEAT: usize = 1 << 16;

pub fn parse_sections(src: &str) -> Result<Vec<Section>> {
    let mut sections: Vec<Section> = Vec::new();
    for (idx, raw) in src.lines().enumerate() {
        let line = idx + 1;
        let text = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if text.is_empty() {
            continue;
        }
        if let Some(rest) = text.strip_prefix('[') {
            let inner = rest
                .strip_suffix(']')
                .ok_or_else(|| Error::parse(line, None, "section header missing `]`"))?;
            let mut words = inner.split_whitespace();
            let kind = words
                .next()
                .ok_or_else(|| Error::parse(line, None, "empty section header"))?;
            let name = words.next().map(str::to_owned);
            if words.next().is_some() {
                return Err(Error::parse(line, None, "section header has extra words"));
            }
            if !is_identifier(kind) || name.as_deref().is_some_and(|n| !is_identifier(n)) {
                return Err(Error::parse(line, None, "section kind and name must be identifiers"));
            }
            sections.push(Section {
                kind: kind.to_owned(),
                name,
                line,
                entries: Vec::new(),
            });
            continue;
        }
        let (key, value) = text
            .split_once('=')
            .ok_or_else(|| Error::parse(line, None, "expected `key = value`"))?;
        let key = key.trim();
        if !is_identifier(key) {
            return Err(Error::parse(line, None, format!("invalid key `{key}`")));
        }
        let section = sections
            .last_mut()
            .ok_or_else(|| Error::parse(line, Some(key), "entry before any section header"))?;
        if section.entries.iter().any(|e| e.key == key) {
            return Err(Error::parse(line, Some(key), "duplicate key"));
        }
        section.entries.push(Entry {
            key: key.to_owned(),
            value: value.trim().to_owned(),
            line,
        });
    }
    Ok(sections)
}

pub fn is_identifier(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.')
}

impl Section {
    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.key == key)
    }

    pub fn require(&self, key: &str) -> Result<&Entry> {
        self.get(key).ok_or_else(|| {
            Error::parse(
                self.line,
                Some(key),
                format!("section [{}] is missing `{key}`", self.kind),
            )
        })
    }

    pub fn require_name(&self) -> Result<&str> {
        self.name
            .as_deref()
            .ok_or_else(|| Error::parse(self.line, None, format!("[{}] needs a name", self.kind)))
    }

    /// Rejects keys outside `allowed`.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for e in &self.entries {
            if !allowed.contains(&e.key.as_str()) {
                return Err(Error::parse(
                    e.line,
                    Some(&e.key),
                    format!("unknown key in [{}]", self.kind),
                ));
            }
        }
        Ok(())
    }
}

impl Entry {
    pub fn err(&self, message: impl Into<String>) -> Error {
        Error::parse(self.line, Some(&self.key), message)
    }

    pub fn numbers(&self) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for tok in self.value.split_whitespace() {
            let (val, count) = match tok.split_once('*') {
                Some((v, n)) => {
                    let n: usize = n
                        .parse()
                        .map_err(|_| self.err(format!("bad repeat count in `{tok}`")))?;
                    if n == 0 || n > MAX_REPEAT {
                        return Err(self.err(format!("repeat count out of range in `{tok}`")));
                    }
                    (v, n)
                }
                None => (tok, 1),
            };
            let x = parse_f64(val).ok_or_else(|| self.err(format!("`{val}` is not a number")))?;
            if out.len() + count > MAX_REPEAT {
                return Err(self.err("list too long"));
            }
            out.extend(std::iter::repeat_n(x, count));
        }
        Ok(out)
    }

    pub fn fixed<const N: usize>(&self) -> Result<[f64; N]> {
        let v = self.numbers()?;
        v.try_into()
            .map_err(|v: Vec<f64>| self.err(format!("expected {N} numbers, found {}", v.len())))
    }

    pub fn number(&self) -> Result<f64> {
        Ok(self.fixed::<1>()?[0])
    }

    pub fn count(&self) -> Result<usize> {
        self.value
            .trim()
            .parse()
            .map_err(|_| self.err("expected a non-negative integer"))
    }

    pub fn boolean(&self) -> Result<bool> {
        match self.value.trim() {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            other => Err(self.err(format!("expected true/false, found `{other}`"))),
        }
    }

    pub fn word(&self) -> Result<&str> {
        let v = self.value.trim();
        if is_identifier(v) {
            Ok(v)
        } else {
            Err(self.err("expected a single identifier"))
        }
    }

    pub fn words(&self) -> Result<Vec<&str>> {
        self.value
            .split_whitespace()
            .map(|w| {
                if is_identifier(w) {
                    Ok(w)
                } else {
                    Err(self.err(format!("`{w}` is not an identifier")))
                }
            })
            .collect()
    }

    /// Comma-separated `(a b)` pairs, e.g. `0 100, 1 200`.
    pub fn pairs(&self) -> Result<Vec<(f64, f64)>> {
        self.value
            .split(',')
            .map(|chunk| {
                let mut it = chunk.split_whitespace();
                let a = it.next().and_then(parse_f64);
                let b = it.next().and_then(parse_f64);
                match (a, b, it.next()) {
                    (Some(a), Some(b), None) => Ok((a, b)),
                    _ => Err(self.err(format!("expected a number pair, found `{}`", chunk.trim()))),
                }
            })
            .collect()
    }
}

pub fn parse_f64(tok: &str) -> Option<f64> {
    let x: f64 = match tok {
        "inf" | "+inf" => f64::INFINITY,
        "-inf" => f64::NEG_INFINITY,
        _ => {
            // `f64::from_str` also accepts spellings like "infinity" and "NaN".
            if tok.chars().any(|c| c.is_ascii_alphabetic() && c != 'e' && c != 'E') {
                return None;
            }
            tok.parse().ok()?
        }
    };
    (!x.is_nan()).then_some(x)
}

/// Formats numbers so that they parse back bit-identically.
pub fn fmt_numbers<'a>(values: impl IntoIterator<Item = &'a f64>) -> String {
    values
        .into_iter()
        .map(|v| fmt_f64(*v))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn fmt_f64(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v:?}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_entries() {
        let src = "# header\n[options]\nname = x # trailing\n\n[link base]\nmass = 2.5\n";
        let s = parse_sections(src).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[1].name.as_deref(), Some("base"));
        assert_eq!(s[1].require("mass").unwrap().number().unwrap(), 2.5);
        assert_eq!(s[0].get("name").unwrap().line, 3);
    }

    #[test]
    fn repeat_and_infinities() {
        let s = parse_sections("[a]\nv = 1*3 -inf inf 2e-3\n").unwrap();
        let v = s[0].entries[0].numbers().unwrap();
        assert_eq!(v, vec![1.0, 1.0, 1.0, f64::NEG_INFINITY, f64::INFINITY, 2e-3]);
    }

    #[test]
    fn errors_carry_line_and_field() {
        let err = parse_sections("[a]\nx = 1\nx = 2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
        let s = parse_sections("[a]\nx = 1 nan\n").unwrap();
        let err = s[0].entries[0].numbers().unwrap_err();
        assert!(err.to_string().contains("line 2, field `x`"), "{err}");
        assert!(parse_sections("k = 1\n").is_err());
        assert!(parse_sections("[a\n").is_err());
    }

    #[test]
    fn float_format_round_trips() {
        for v in [0.1, -2.5e-17, 1.0 / 3.0, f64::INFINITY, f64::NEG_INFINITY, 0.0] {
            assert_eq!(parse_f64(&fmt_f64(v)), Some(v));
        }
    }
}
