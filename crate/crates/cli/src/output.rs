//! Atomic file writes and `%.17g` JSON rendering.

use std::io::Write;
use std::path::{Path, PathBuf};

use kvbeam::format::fmt_g17;
use serde::Serialize;
use serde_json::Value;

use crate::error::CliError;

/// Output directory that records every file written through it.
pub struct OutDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(OutDir { root: root.to_path_buf(), written: Vec::new() })
    }

    /// Writes `contents` to a temporary file in the directory, then renames it
    /// over `name`.
    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let target = self.root.join(name);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.root).map_err(|e| CliError::io(&self.root, e))?;
        tmp.write_all(contents.as_bytes()).map_err(|e| CliError::io(tmp.path(), e))?;
        tmp.as_file().sync_all().map_err(|e| CliError::io(tmp.path(), e))?;
        tmp.persist(&target).map_err(|e| CliError::io(&target, e.error))?;
        self.written.push(target.display().to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        self.write(name, &to_json(value))
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }
}

/// Pretty JSON with every float printed as `%.17g`; non-finite floats become `null`.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let value = serde_json::to_value(value).expect("report types serialize to JSON");
    let mut out = String::new();
    render(&value, 0, &mut out);
    out.push('\n');
    out
}

fn render(value: &Value, indent: usize, out: &mut String) {
    let pad = |n: usize| "  ".repeat(n);
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => match (n.as_u64(), n.as_i64(), n.as_f64()) {
            (Some(u), _, _) => out.push_str(&u.to_string()),
            (_, Some(i), _) => out.push_str(&i.to_string()),
            (_, _, Some(f)) if f.is_finite() => out.push_str(&fmt_g17(f)),
            _ => out.push_str("null"),
        },
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(items) if items.is_empty() => out.push_str("[]"),
        Value::Array(items) => {
            out.push_str("[\n");
            for (k, item) in items.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                render(item, indent + 1, out);
                out.push_str(if k + 1 < items.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push(']');
        }
        Value::Object(map) if map.is_empty() => out.push_str("{}"),
        Value::Object(map) => {
            out.push_str("{\n");
            for (k, (key, item)) in map.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                out.push_str(&Value::String(key.clone()).to_string());
                out.push_str(": ");
                render(item, indent + 1, out);
                out.push_str(if k + 1 < map.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push('}');
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_use_seventeen_digits() {
        let v = serde_json::json!({"a": 0.1, "b": [1, -2], "c": f64::NAN, "d": "x\"y"});
        let text = to_json(&v);
        assert!(text.contains("\"a\": 0.10000000000000001"));
        assert!(text.contains("\"c\": null"));
        assert!(text.contains("\"d\": \"x\\\"y\""));
        let back: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(back["b"][1], -2);
    }

    #[test]
    fn writes_are_recorded_and_replace_old_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutDir::create(dir.path()).unwrap();
        out.write("a.csv", "one\n").unwrap();
        out.write("a.csv", "two\n").unwrap();
        assert_eq!(std::fs::read_to_string(dir.path().join("a.csv")).unwrap(), "two\n");
        assert_eq!(out.written().len(), 2);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
