//! Artifact files and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use pulsefront_core::report::sig;

use crate::config::ExperimentConfig;
use crate::CliError;

/// Environment variable naming the output root.
pub const OUT_ENV: &str = "PULSEFRONT_OUT";

#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

/// Result of one task: stdout lines, files and a JSON summary.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub lines: Vec<String>,
    pub artifacts: Vec<Artifact>,
    pub summary: Value,
    /// False when a numerical claim failed; maps to exit code 1.
    pub passed: bool,
}

impl Outcome {
    pub fn new(summary: Value) -> Self {
        Self {
            lines: Vec::new(),
            artifacts: Vec::new(),
            summary,
            passed: true,
        }
    }

    pub fn file(&mut self, name: &str, contents: String) {
        self.artifacts.push(Artifact {
            name: name.into(),
            contents,
        });
    }

    pub fn json(&mut self, name: &str, value: &impl Serialize) {
        self.file(name, to_json(value));
    }
}

/// Rounds every float to nine significant digits.
pub fn rounded(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().unwrap();
            sig(x)
                .parse::<f64>()
                .ok()
                .and_then(serde_json::Number::from_f64)
                .map(Value::Number)
                .unwrap_or(Value::Null)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(rounded).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, rounded(v))).collect()),
        v => v,
    }
}

/// Pretty JSON with sorted keys and rounded floats.
pub fn to_json(value: &impl Serialize) -> String {
    let v = serde_json::to_value(value).expect("report serializes");
    let mut s = serde_json::to_string_pretty(&rounded(v)).expect("json renders");
    s.push('\n');
    s
}

pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let digest = Sha256::digest(cfg.canonical().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Output root: explicit path, then config, then the environment.
pub fn output_root(explicit: Option<&Path>, cfg: &ExperimentConfig) -> Option<PathBuf> {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| cfg.output.as_ref().map(PathBuf::from))
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    schema: u32,
    task: &'static str,
    config_hash: String,
    artifacts: Vec<&'a str>,
    passed: bool,
    diagnostics: &'a Value,
}

/// Writes the task's files plus `manifest.json` and the resolved config.
pub fn write_artifacts(dir: &Path, cfg: &ExperimentConfig, outcome: &Outcome) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    for a in &outcome.artifacts {
        fs::write(dir.join(&a.name), &a.contents)?;
    }
    fs::write(dir.join("config.toml"), cfg.canonical())?;
    let manifest = Manifest {
        tool: "pulsefront",
        version: env!("CARGO_PKG_VERSION"),
        schema: cfg.schema,
        task: cfg.task.name(),
        config_hash: config_hash(cfg),
        artifacts: outcome.artifacts.iter().map(|a| a.name.as_str()).collect(),
        passed: outcome.passed,
        diagnostics: &outcome.summary,
    };
    fs::write(dir.join("manifest.json"), to_json(&manifest))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn floats_keep_nine_digits() {
        let v = rounded(json!({"b": 1.0 / 3.0, "a": [2.0, 7], "c": "x"}));
        assert_eq!(serde_json::to_string(&v).unwrap(), r#"{"a":[2.0,7],"b":0.333333333,"c":"x"}"#);
    }
}
