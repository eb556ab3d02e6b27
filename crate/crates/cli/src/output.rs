//! Atomic artifact writing with provenance metadata.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Meta {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Meta {
    pub fn new(command: &str, config_hash: String, seed: u64) -> Self {
        Meta {
            command: command.to_string(),
            version: VERSION.to_string(),
            config_hash,
            seed,
        }
    }
}

/// Result of a command, ready to be written.
#[derive(Debug, Clone)]
pub enum Artifact {
    /// Bulk numerics; the metadata goes to a `<out>.meta.json` sidecar.
    Csv(String),
    /// Scalar report; the metadata is embedded under `"meta"`.
    Json(Value),
}

/// Path of the metadata sidecar of a CSV artifact.
pub fn meta_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Renders the artifact and writes it to `out`, or to stdout when `out` is
/// `None`. Files are written through a temporary file in the target
/// directory and renamed into place.
pub fn emit(artifact: Artifact, meta: &Meta, out: Option<&Path>) -> Result<(), CliError> {
    match artifact {
        Artifact::Csv(body) => match out {
            Some(path) => {
                let meta_json = pretty(&serde_json::to_value(meta).expect("meta serializes"));
                let data = stage(path, body.as_bytes())?;
                let side = stage(&meta_path(path), meta_json.as_bytes())?;
                commit(data, path)?;
                commit(side, &meta_path(path))
            }
            // Stdout stays plain CSV; provenance goes to stderr.
            None => {
                eprintln!("# {}", serde_json::to_string(meta).expect("meta serializes"));
                print(&body)
            }
        },
        Artifact::Json(mut v) => {
            if let Value::Object(m) = &mut v {
                m.insert("meta".into(), serde_json::to_value(meta).expect("meta serializes"));
            }
            let text = pretty(&v);
            match out {
                Some(path) => commit(stage(path, text.as_bytes())?, path),
                None => print(&text),
            }
        }
    }
}

/// Writes a file atomically.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    commit(stage(path, bytes)?, path)
}

pub fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("value serializes");
    s.push('\n');
    s
}

fn print(text: &str) -> Result<(), CliError> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes()).and_then(|_| out.flush()).map_err(CliError::Io)
}

fn stage(path: &Path, bytes: &[u8]) -> Result<tempfile::NamedTempFile, CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(CliError::Io)?;
    tmp.write_all(bytes).and_then(|_| tmp.flush()).map_err(CliError::Io)?;
    Ok(tmp)
}

fn commit(tmp: tempfile::NamedTempFile, path: &Path) -> Result<(), CliError> {
    tmp.persist(path).map(|_| ()).map_err(|e| CliError::Io(e.error))
}

/// Shortest round-trip decimal form, so identical values print identically.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}
