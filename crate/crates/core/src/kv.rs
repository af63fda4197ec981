//! Flat `key = value` text files with `#` comments.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KvEntry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

pub fn parse_kv(text: &str, origin: &str) -> Result<Vec<KvEntry>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::malformed(format!("{origin}:{}", i + 1), "expected `key = value`"))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::malformed(format!("{origin}:{}", i + 1), "empty key"));
        }
        out.push(KvEntry {
            key: key.to_string(),
            value: value.trim().to_string(),
            line: i + 1,
        });
    }
    Ok(out)
}
