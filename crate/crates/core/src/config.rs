//! Flat `key = value` configuration text with `#` comments.

use std::str::FromStr;

use crate::error::{Error, Result};

/// A configuration section that reads and writes its fields as text pairs.
pub trait Section {
    /// Current values in a fixed order.
    fn entries(&self) -> Vec<(&'static str, String)>;

    /// Assigns one field; returns `Ok(false)` when the key is not part of this section.
    fn set(&mut self, key: &str, value: &str) -> Result<bool>;
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped;
/// duplicate keys and lines without `=` are errors.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        if out.iter().any(|(k, _)| k == key) {
            return Err(Error::Config(format!(
                "line {}: duplicate key {key}",
                n + 1
            )));
        }
        out.push((key.to_string(), value.to_string()));
    }
    Ok(out)
}

/// Applies pairs to the first section that accepts each key; unknown keys are errors.
pub fn apply(pairs: &[(String, String)], sections: &mut [&mut dyn Section]) -> Result<()> {
    'pairs: for (key, value) in pairs {
        for section in sections.iter_mut() {
            if section.set(key, value)? {
                continue 'pairs;
            }
        }
        return Err(Error::Config(format!("unknown key {key}")));
    }
    Ok(())
}

/// Renders sections as `key = value` lines.
pub fn render(sections: &[&dyn Section]) -> String {
    let mut out = String::new();
    for section in sections {
        for (key, value) in section.entries() {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&value);
            out.push('\n');
        }
    }
    out
}

/// Parses one value, naming the key on failure.
pub fn value<T: FromStr>(key: &str, text: &str) -> Result<T> {
    text.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {text:?}")))
}
