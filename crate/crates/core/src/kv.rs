//! Flat `key=value` text files.
//!
//! Used for corpus manifests, model config sidecars, run manifests and sweep
//! grids. Lines starting with `#` are comments. A grid file is a sequence of
//! such blocks separated by blank lines.

use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Ordered list of key/value pairs. Later entries override earlier ones on lookup.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyValues {
    origin: String,
    entries: Vec<(String, String)>,
}

impl KeyValues {
    pub fn new(origin: impl Into<String>) -> Self {
        KeyValues { origin: origin.into(), entries: Vec::new() }
    }

    pub fn parse(origin: impl Into<String>, text: &str) -> Result<Self> {
        let mut kv = KeyValues::new(origin);
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            kv.push_line(line, lineno + 1)?;
        }
        Ok(kv)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(path.display().to_string(), &text)
    }

    fn push_line(&mut self, line: &str, lineno: usize) -> Result<()> {
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::parse(
                &self.origin,
                format!("line {lineno}: expected key=value, got {line:?}"),
            ));
        };
        let key = k.trim();
        if key.is_empty() {
            return Err(Error::parse(&self.origin, format!("line {lineno}: empty key")));
        }
        self.entries.push((key.to_string(), v.trim().to_string()));
        Ok(())
    }

    pub fn origin(&self) -> &str {
        &self.origin
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.get(key).is_some()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    /// Typed lookup; `Ok(None)` when absent, error when present but malformed.
    pub fn parse_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|e| {
                Error::parse(&self.origin, format!("key {key}: cannot parse {raw:?}: {e}"))
            }),
        }
    }

    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.parse_opt(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        self.parse_opt(key)?
            .ok_or_else(|| Error::parse(&self.origin, format!("missing key {key}")))
    }

    /// Overlay `other` on top of `self`: keys in `other` win.
    pub fn merged(&self, other: &KeyValues) -> KeyValues {
        let mut out = self.clone();
        for (k, v) in &other.entries {
            out.set(k, v);
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            s.push_str(k);
            s.push('=');
            s.push_str(v);
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }
}

/// Split a grid file into blank-line separated blocks.
pub fn parse_blocks(origin: &str, text: &str) -> Result<Vec<KeyValues>> {
    let mut blocks = Vec::new();
    let mut current = KeyValues::new(format!("{origin} block 1"));
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            if !current.entries.is_empty() {
                blocks.push(current);
                current = KeyValues::new(format!("{origin} block {}", blocks.len() + 1));
            }
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        current.push_line(line, lineno + 1)?;
    }
    if !current.entries.is_empty() {
        blocks.push(current);
    }
    Ok(blocks)
}

/// Write via a temporary sibling then rename, so readers never see partial files.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let kv = KeyValues::parse("t", "# c\n a = 1 \n\nb=x=y\n").unwrap();
        assert_eq!(kv.get("a"), Some("1"));
        assert_eq!(kv.get("b"), Some("x=y"));
        assert_eq!(kv.parse_or::<u32>("a", 0).unwrap(), 1);
        assert_eq!(kv.parse_or::<u32>("zz", 7).unwrap(), 7);
    }

    #[test]
    fn rejects_lines_without_equals() {
        assert!(KeyValues::parse("t", "novalue\n").is_err());
        assert!(KeyValues::parse("t", "=3\n").is_err());
    }

    #[test]
    fn malformed_value_is_an_error() {
        let kv = KeyValues::parse("t", "n=abc").unwrap();
        assert!(kv.parse_opt::<u32>("n").is_err());
    }

    #[test]
    fn merge_prefers_overlay() {
        let base = KeyValues::parse("a", "x=1\ny=2").unwrap();
        let top = KeyValues::parse("b", "y=3\nz=4").unwrap();
        let m = base.merged(&top);
        assert_eq!(m.to_text(), "x=1\ny=3\nz=4\n");
    }

    #[test]
    fn blocks_split_on_blank_lines() {
        let blocks = parse_blocks("g", "a=1\n\n\n# x\nb=2\nc=3\n\n").unwrap();
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[1].get("c"), Some("3"));
    }
}
