//! In-memory artifact sets, content hashes and manifests.

use std::fmt::Display;
use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A named output file held in memory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    /// Git-style content hash: SHA-256 of `blob <len>\0<content>`.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("blob {}\0", self.bytes.len()).as_bytes());
        h.update(&self.bytes);
        format!("sha256:{}", hex::encode(h.finalize()))
    }
}

/// Ordered collection of artifacts produced by one run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ArtifactSet {
    pub items: Vec<Artifact>,
}

impl ArtifactSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.items.push(Artifact {
            name: name.into(),
            bytes,
        });
    }

    pub fn extend(&mut self, other: ArtifactSet) {
        self.items.extend(other.items);
    }

    pub fn get(&self, name: &str) -> Option<&Artifact> {
        self.items.iter().find(|a| a.name == name)
    }

    /// Pretty JSON with a trailing newline.
    pub fn push_json<T: Serialize>(&mut self, name: impl Into<String>, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.push(name, bytes);
        Ok(())
    }

    /// CSV with a header and rows of displayable cells.
    pub fn push_csv<D: Display>(&mut self, name: impl Into<String>, header: &[&str], rows: impl IntoIterator<Item = Vec<D>>) {
        self.push(name, csv_bytes(header, rows));
    }

    /// Name → hash, in artifact order.
    pub fn hashes(&self) -> serde_json::Map<String, serde_json::Value> {
        self.items
            .iter()
            .map(|a| (a.name.clone(), serde_json::Value::String(a.content_hash())))
            .collect()
    }

    /// Write every artifact under `dir` (created if missing).
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for a in &self.items {
            if a.name.contains("..") || Path::new(&a.name).is_absolute() {
                return Err(Error::Format(format!("refusing artifact name {}", a.name)));
            }
            let path = dir.join(&a.name);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(path, &a.bytes)?;
        }
        Ok(())
    }
}

pub fn csv_bytes<D: Display>(header: &[&str], rows: impl IntoIterator<Item = Vec<D>>) -> Vec<u8> {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out.into_bytes()
}

/// Single-column CSV of samples.
pub fn samples_csv(column: &str, values: &[f64]) -> Vec<u8> {
    csv_bytes(&[column], values.iter().map(|v| vec![*v]))
}

/// Manifest with fields {config, seed, hashes, timings, results}.
pub fn manifest(config: serde_json::Value, seed: u64, artifacts: &ArtifactSet, timings: serde_json::Value, results: serde_json::Value) -> serde_json::Value {
    serde_json::json!({
        "config": config,
        "seed": seed,
        "hashes": artifacts.hashes(),
        "timings": timings,
        "results": results,
    })
}
