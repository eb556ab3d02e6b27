//! Strict experiment configs and their provenance hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandName {
    ApproxError,
    TiltedSweep,
    Mixing,
    Spectra,
    Regime,
    CwBound,
    GappedSearch,
    Simulate,
}

impl CommandName {
    pub fn as_str(self) -> &'static str {
        match self {
            CommandName::ApproxError => "approx-error",
            CommandName::TiltedSweep => "tilted-sweep",
            CommandName::Mixing => "mixing",
            CommandName::Spectra => "spectra",
            CommandName::Regime => "regime",
            CommandName::CwBound => "cw-bound",
            CommandName::GappedSearch => "gapped-search",
            CommandName::Simulate => "simulate",
        }
    }
}

/// Config file contents. Unknown keys at any level are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: CommandName,
    #[serde(default)]
    pub params: Map<String, Value>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Overlays command-line values on config params, then parses strictly.
pub fn resolve_params<T: serde::de::DeserializeOwned>(
    base: Option<&Map<String, Value>>,
    overrides: Map<String, Value>,
) -> Result<T, CliError> {
    let mut merged = base.cloned().unwrap_or_default();
    merged.extend(overrides);
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Config(format!("params: {e}")))
}

/// Non-default command-line values as a JSON object.
pub fn overrides<A: Serialize>(args: &A) -> Map<String, Value> {
    match serde_json::to_value(args) {
        Ok(Value::Object(m)) => m,
        _ => Map::new(),
    }
}

/// SHA-256 of the canonical JSON of `(command, params, seed)`.
pub fn config_hash<P: Serialize>(command: CommandName, params: &P, seed: u64) -> String {
    #[derive(Serialize)]
    struct Canonical<'a, P> {
        command: &'a str,
        params: &'a P,
        seed: u64,
    }
    let bytes = serde_json::to_vec(&Canonical {
        command: command.as_str(),
        params,
        seed,
    })
    .expect("params serialize");
    hex(&Sha256::digest(&bytes))
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn is_false(b: &bool) -> bool {
    !*b
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_fields_are_rejected() {
        let ok = r#"{"command":"cw-bound","params":{"n":10},"seed":3}"#;
        let cfg: ExperimentConfig = serde_json::from_str(ok).unwrap();
        assert_eq!(cfg.command, CommandName::CwBound);
        assert_eq!(cfg.seed, Some(3));
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"command":"cw-bound","extra":1}"#).is_err());
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"command":"nope"}"#).is_err());
    }

    #[test]
    fn overrides_win_and_parsing_is_strict() {
        #[derive(Deserialize, Debug, PartialEq)]
        #[serde(deny_unknown_fields)]
        struct P {
            a: u32,
            #[serde(default)]
            b: f64,
        }
        let base: Map<String, Value> = serde_json::from_str(r#"{"a":1,"b":2.5}"#).unwrap();
        let mut over = Map::new();
        over.insert("a".into(), Value::from(7));
        let p: P = resolve_params(Some(&base), over).unwrap();
        assert_eq!(p, P { a: 7, b: 2.5 });
        let bad: Map<String, Value> = serde_json::from_str(r#"{"a":1,"c":0}"#).unwrap();
        assert!(matches!(resolve_params::<P>(Some(&bad), Map::new()), Err(CliError::Config(_))));
    }

    #[test]
    fn hash_depends_on_every_part() {
        let a = config_hash(CommandName::CwBound, &serde_json::json!({"n": 10}), 1);
        assert_eq!(a.len(), 64);
        assert_eq!(a, config_hash(CommandName::CwBound, &serde_json::json!({"n": 10}), 1));
        assert_ne!(a, config_hash(CommandName::CwBound, &serde_json::json!({"n": 10}), 2));
        assert_ne!(a, config_hash(CommandName::CwBound, &serde_json::json!({"n": 12}), 1));
        assert_ne!(a, config_hash(CommandName::Regime, &serde_json::json!({"n": 10}), 1));
    }
}
