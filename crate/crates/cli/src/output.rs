use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use saltcal_core::ScalarField;

/// A required input file does not exist.
#[derive(Debug)]
pub struct MissingInput(pub PathBuf);

impl std::fmt::Display for MissingInput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "missing input {}", self.0.display())
    }
}

impl std::error::Error for MissingInput {}

pub fn require(path: &Path, hint: &str) -> anyhow::Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(anyhow::Error::new(MissingInput(path.to_path_buf())).context(hint.to_string()))
    }
}

/// Writes `contents` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, contents: &str) -> anyhow::Result<()> {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    let tmp = path.with_file_name(name);
    fs::write(&tmp, contents).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

/// `n` lines of `n` comma-separated values; line `i` holds `x = i h`.
pub fn field_csv(f: &ScalarField) -> String {
    let n = f.grid().n();
    let mut out = String::with_capacity(f.values().len() * 24);
    for row in f.values().chunks(n) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Plain decimal for moderate magnitudes, scientific otherwise.
#[derive(Clone, Copy, Debug)]
pub struct Num(pub f64);

impl std::fmt::Display for Num {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let a = self.0.abs();
        if a == 0.0 || !a.is_finite() || (1e-4..1e9).contains(&a) {
            write!(f, "{}", self.0)
        } else {
            write!(f, "{:e}", self.0)
        }
    }
}

pub fn nums(values: &[f64]) -> String {
    join(values.iter().map(|&v| Num(v)), ";")
}

/// `key = value` lines.
#[derive(Default)]
pub struct KeyValue(String);

impl KeyValue {
    pub fn put(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        let _ = writeln!(self.0, "{key} = {value}");
        self
    }

    pub fn text(&self) -> &str {
        &self.0
    }
}

pub fn join<T: std::fmt::Display>(items: impl IntoIterator<Item = T>, sep: &str) -> String {
    items.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(sep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn num_switches_notation() {
        assert_eq!(Num(0.25).to_string(), "0.25");
        assert_eq!(Num(0.0).to_string(), "0");
        assert_eq!(Num(4.9e-32).to_string(), "4.9e-32");
        assert_eq!(Num(-3e12).to_string(), "-3e12");
        assert_eq!(Num(4.9e-32).to_string().parse::<f64>().unwrap(), 4.9e-32);
    }
}
