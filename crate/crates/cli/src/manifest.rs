//! Content-addressed bookkeeping. Every command appends one entry to
//! `manifest.jsonl` in the run directory listing the files it read and
//! wrote, each with its SHA-256 and schema.

use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_SCHEMA: &str = "crushgraph.manifest/1";
pub const MANIFEST_FILE: &str = "manifest.jsonl";

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    /// Relative to the run directory.
    pub path: String,
    pub schema: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub schema: String,
    pub command: String,
    pub args: Vec<String>,
    pub tool_version: String,
    pub seed: u64,
    pub config_sha256: String,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
}

/// Reads and writes files under the run directory, hashing as it goes.
pub struct Recorder {
    root: PathBuf,
    inputs: Vec<FileHash>,
    outputs: Vec<FileHash>,
}

impl Recorder {
    pub fn new(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(|source| CliError::Io {
            path: root.to_path_buf(),
            source,
        })?;
        Ok(Self {
            root: root.to_path_buf(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn exists(&self, rel: &str) -> bool {
        self.path(rel).is_file()
    }

    pub fn read(&mut self, rel: &str, schema: &str) -> Result<String, CliError> {
        let path = self.path(rel);
        if !path.is_file() {
            return Err(CliError::MissingInput(path));
        }
        let text = std::fs::read_to_string(&path).map_err(|source| CliError::Io { path, source })?;
        let entry = FileHash {
            path: rel.to_string(),
            schema: schema.to_string(),
            sha256: sha256_hex(text.as_bytes()),
        };
        if !self.inputs.contains(&entry) {
            self.inputs.push(entry);
        }
        Ok(text)
    }

    pub fn write(&mut self, rel: &str, schema: &str, content: &str) -> Result<(), CliError> {
        let path = self.path(rel);
        std::fs::write(&path, content).map_err(|source| CliError::Io { path, source })?;
        self.outputs.retain(|o| o.path != rel);
        self.outputs.push(FileHash {
            path: rel.to_string(),
            schema: schema.to_string(),
            sha256: sha256_hex(content.as_bytes()),
        });
        Ok(())
    }

    /// JSON-lines file whose rows each carry `"schema": <schema>`.
    pub fn read_jsonl<T: DeserializeOwned>(&mut self, rel: &str, schema: &str) -> Result<Vec<T>, CliError> {
        let text = self.read(rel, schema)?;
        let path = self.path(rel);
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(n, line)| {
                let value: serde_json::Value = serde_json::from_str(line).map_err(|e| CliError::Parse {
                    path: path.clone(),
                    message: format!("line {}: {e}", n + 1),
                })?;
                check_schema(&value, schema, &path)?;
                serde_json::from_value(value).map_err(|e| CliError::Parse {
                    path: path.clone(),
                    message: format!("line {}: {e}", n + 1),
                })
            })
            .collect()
    }

    pub fn read_json<T: DeserializeOwned>(&mut self, rel: &str, schema: &str) -> Result<T, CliError> {
        let text = self.read(rel, schema)?;
        let path = self.path(rel);
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Parse {
            path: path.clone(),
            message: e.to_string(),
        })?;
        check_schema(&value, schema, &path)?;
        serde_json::from_value(value).map_err(|e| CliError::Parse {
            path,
            message: e.to_string(),
        })
    }

    /// CSV file whose header must equal `header`; returns the data rows.
    pub fn read_csv(&mut self, rel: &str, schema: &str, header: &[String]) -> Result<Vec<Vec<String>>, CliError> {
        let text = self.read(rel, schema)?;
        let path = self.path(rel);
        let parse = |e: csv::Error| CliError::Parse {
            path: path.clone(),
            message: e.to_string(),
        };
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let found: Vec<String> = reader.headers().map_err(parse)?.iter().map(str::to_string).collect();
        if found != header {
            return Err(CliError::Schema {
                path: path.clone(),
                expected: format!("{schema} [{}]", header.join(",")),
                found: found.join(","),
            });
        }
        reader
            .records()
            .map(|r| r.map(|r| r.iter().map(str::to_string).collect()).map_err(parse))
            .collect()
    }

    pub fn finish(self, entry: ManifestEntry) -> Result<ManifestEntry, CliError> {
        let entry = ManifestEntry {
            inputs: self.inputs,
            outputs: self.outputs,
            ..entry
        };
        let path = self.root.join(MANIFEST_FILE);
        let line = serde_json::to_string(&entry).expect("manifest serializes");
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|source| CliError::Io { path: path.clone(), source })?;
        writeln!(file, "{line}").map_err(|source| CliError::Io { path, source })?;
        Ok(entry)
    }
}

fn check_schema(value: &serde_json::Value, schema: &str, path: &Path) -> Result<(), CliError> {
    let found = value.get("schema").and_then(|s| s.as_str()).unwrap_or("");
    if found == schema {
        Ok(())
    } else {
        Err(CliError::Schema {
            path: path.to_path_buf(),
            expected: schema.to_string(),
            found: found.to_string(),
        })
    }
}

/// CSV text from a header and string rows.
pub fn csv_text(header: &[String], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for r in rows {
        w.write_record(r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
}

pub fn jsonl_text<T: Serialize>(rows: &[T]) -> String {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r).expect("row serializes"));
        out.push('\n');
    }
    out
}
