//! Run manifests: the resolved configuration plus checksums of every result
//! file. A manifest is itself a valid config file for the same command.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{HarnessError, Result};

pub const MANIFEST_FILE: &str = "manifest.txt";

/// A result file and the tab-separated column left out of its checksum.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub timing_column: Option<&'static str>,
}

impl Artifact {
    pub fn exact(name: &str) -> Self {
        Artifact { name: name.to_string(), timing_column: None }
    }

    pub fn timed(name: &str, column: &'static str) -> Self {
        Artifact { name: name.to_string(), timing_column: Some(column) }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Drops the named column from tab-separated text with a header row.
pub fn without_column(text: &str, column: &str) -> String {
    let mut lines = text.lines();
    let Some(header) = lines.next() else { return String::new() };
    let Some(idx) = header.split('\t').position(|c| c == column) else { return text.to_string() };
    let keep = |line: &str| {
        let fields: Vec<&str> = line.split('\t').enumerate().filter(|(i, _)| *i != idx).map(|(_, f)| f).collect();
        fields.join("\t") + "\n"
    };
    std::iter::once(header).chain(lines).map(keep).collect()
}

/// Checksum of an artifact with its timing column removed.
pub fn artifact_checksum(dir: &Path, artifact: &Artifact) -> Result<String> {
    let path = dir.join(&artifact.name);
    let bytes = std::fs::read(&path).map_err(HarnessError::io(&path))?;
    Ok(match artifact.timing_column {
        None => sha256_hex(&bytes),
        Some(col) => sha256_hex(without_column(&String::from_utf8_lossy(&bytes), col).as_bytes()),
    })
}

pub fn render_manifest(run: &RunConfig, checksums: &[(Artifact, String)]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# command {}", run.command.name());
    for (k, v) in &run.values {
        let _ = writeln!(s, "{k} = {v}");
    }
    for (a, sum) in checksums {
        match a.timing_column {
            None => {
                let _ = writeln!(s, "# artifact {} sha256={sum}", a.name);
            }
            Some(col) => {
                let _ = writeln!(s, "# artifact {} sha256={sum} excluding column {col}", a.name);
            }
        }
    }
    s
}

/// Writes `manifest.txt` into the run's output directory.
pub fn write_manifest(run: &RunConfig, artifacts: &[Artifact]) -> Result<()> {
    let checksums = artifacts
        .iter()
        .map(|a| Ok((a.clone(), artifact_checksum(&run.out, a)?)))
        .collect::<Result<Vec<_>>>()?;
    let path = run.out.join(MANIFEST_FILE);
    std::fs::write(&path, render_manifest(run, &checksums)).map_err(HarnessError::io(&path))
}
