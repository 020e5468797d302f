use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Text,
    Csv,
}

/// Reproducibility record attached to every output.
#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub instance_digest: Option<String>,
    pub seeds: Vec<u64>,
    pub version: &'static str,
    pub params: Value,
}

impl Manifest {
    pub fn new(command: &str, params: &impl Serialize) -> Self {
        Self {
            command: command.to_string(),
            instance_digest: None,
            seeds: Vec::new(),
            version: env!("CARGO_PKG_VERSION"),
            params: serde_json::to_value(params).expect("parameters serialize"),
        }
    }

    pub fn with_digest(mut self, digest: &str) -> Self {
        self.instance_digest = Some(digest.to_string());
        self
    }

    pub fn with_seeds(mut self, seeds: Vec<u64>) -> Self {
        self.seeds = seeds;
        self
    }

    /// Single-line JSON for comment headers.
    pub fn compact(&self) -> String {
        serde_json::to_string(self).expect("manifest serializes")
    }
}

/// A parsed instance document with its `manifest` key removed.
pub struct LoadedDocument {
    pub value: Value,
    pub digest: String,
}

/// Reads an instance document; a top-level `manifest` entry is ignored.
/// The digest is the SHA-256 of the document's canonical JSON (sorted keys,
/// no whitespace).
pub fn load_document(path: &Path) -> Result<LoadedDocument> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut value: Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if let Value::Object(map) = &mut value {
        map.remove("manifest");
    }
    Ok(LoadedDocument {
        digest: digest(&value)?,
        value,
    })
}

/// SHA-256 of the canonical JSON encoding.
pub fn digest(value: &Value) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(value)?)))
}

/// Where and how a command writes its main output.
pub struct Sink {
    pub format: Format,
    pub out: Option<PathBuf>,
}

impl Sink {
    pub fn new(format: Option<Format>, out: Option<PathBuf>) -> Self {
        let inferred = out.as_deref().and_then(|p| match p.extension()?.to_str()? {
            "csv" => Some(Format::Csv),
            "txt" => Some(Format::Text),
            _ => None,
        });
        Self {
            format: format.or(inferred).unwrap_or(Format::Json),
            out,
        }
    }

    pub fn write(&self, body: &str) -> Result<()> {
        match &self.out {
            Some(p) => fs::write(p, body).with_context(|| format!("writing {}", p.display())),
            None => {
                let mut so = std::io::stdout().lock();
                so.write_all(body.as_bytes())?;
                so.flush()?;
                Ok(())
            }
        }
    }
}

/// `{"manifest": …, "result": …}`, pretty-printed.
pub fn json_document(manifest: &Manifest, result: &impl Serialize) -> Result<String> {
    #[derive(Serialize)]
    struct Doc<'a, T> {
        manifest: &'a Manifest,
        result: &'a T,
    }
    let mut s = serde_json::to_string_pretty(&Doc { manifest, result })?;
    s.push('\n');
    Ok(s)
}

/// Text output starts with the manifest on a comment line.
pub fn text_document(manifest: &Manifest, body: &str) -> String {
    format!("# manifest {}\n{body}", manifest.compact())
}

/// CSV output with the manifest on a leading comment line.
pub fn csv_document<R: Serialize>(manifest: &Manifest, rows: &[R]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let body = String::from_utf8(w.into_inner()?)?;
    Ok(format!("# manifest {}\n{body}", manifest.compact()))
}

pub fn unsupported(format: Format, command: &str) -> Result<String> {
    bail!("{command} does not support --format {format:?}")
}
