//! Artifact writers. Every file carries the tool version and config hash:
//! CSV and JSON-lines files as a leading `#` comment, JSON files as
//! top-level `tool_version` / `config_hash` fields.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const TOOL_VERSION: &str = concat!("haloscope ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone)]
pub struct Output {
    pub dir: PathBuf,
    pub config_hash: String,
}

fn stamp(config_hash: &str) -> String {
    format!("# {TOOL_VERSION} config_hash={config_hash}\n")
}

impl Output {
    pub fn new(dir: &Path, config_hash: &str) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            config_hash: config_hash.to_string(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write(&self, name: &str, body: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        fs::write(&path, body)?;
        Ok(path)
    }

    pub fn csv<I>(&self, name: &str, header: &[&str], rows: I) -> Result<PathBuf>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let mut body = stamp(&self.config_hash);
        body.push_str(&header.join(","));
        body.push('\n');
        for row in rows {
            body.push_str(&row.join(","));
            body.push('\n');
        }
        self.write(name, body.as_bytes())
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let mut map = Map::new();
        map.insert("tool_version".into(), TOOL_VERSION.into());
        map.insert("config_hash".into(), self.config_hash.clone().into());
        match serde_json::to_value(value).map_err(|e| CliError::Data(e.to_string()))? {
            Value::Object(fields) => map.extend(fields),
            other => {
                map.insert("data".into(), other);
            }
        }
        let mut body = serde_json::to_string_pretty(&Value::Object(map)).map_err(|e| CliError::Data(e.to_string()))?;
        body.push('\n');
        self.write(name, body.as_bytes())
    }

    pub fn jsonl<T: Serialize>(&self, name: &str, values: &[T]) -> Result<PathBuf> {
        let mut body = stamp(&self.config_hash);
        for v in values {
            let line = serde_json::to_string(v).map_err(|e| CliError::Data(e.to_string()))?;
            let _ = writeln!(body, "{line}");
        }
        self.write(name, body.as_bytes())
    }

    pub fn bytes(&self, name: &str, body: &[u8]) -> Result<PathBuf> {
        self.write(name, body)
    }
}

/// Shortest round-trip decimal form of a float.
pub fn num(x: f64) -> String {
    format!("{x:e}")
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

/// A CSV artifact read back: comment stamp, header and rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub config_hash: Option<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub fn read_csv(path: &Path) -> Result<Table> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("missing artifact {}: {e}", path.display())))?;
    let mut config_hash = None;
    let mut lines = text.lines().filter(|l| {
        if let Some(c) = l.strip_prefix('#') {
            if let Some(h) = c.split_whitespace().find_map(|w| w.strip_prefix("config_hash=")) {
                config_hash = Some(h.to_string());
            }
            false
        } else {
            !l.is_empty()
        }
    });
    let header = lines
        .next()
        .ok_or_else(|| CliError::Data(format!("{} has no header", path.display())))?
        .split(',')
        .map(str::to_string)
        .collect::<Vec<_>>();
    let rows = lines
        .map(|l| l.split(',').map(str::to_string).collect::<Vec<_>>())
        .collect::<Vec<_>>();
    if let Some(bad) = rows.iter().position(|r| r.len() != header.len()) {
        return Err(CliError::Data(format!("{} row {} has the wrong width", path.display(), bad + 1)));
    }
    Ok(Table {
        config_hash,
        header,
        rows,
    })
}
