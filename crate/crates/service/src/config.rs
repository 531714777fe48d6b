//! Service configuration, read from JSON or `key=value` lines.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sniff_core::game::GameConfig;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("line {line}: expected key=value")]
    Syntax { line: usize },
    #[error("line {line}: key {key} conflicts with an earlier entry")]
    Conflict { line: usize, key: String },
    #[error("invalid config: {0}")]
    Invalid(#[from] serde_json::Error),
}

/// Embedding and generation endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub endpoint_url: Option<String>,
    pub auth_header: String,
    pub cache_dir: Option<PathBuf>,
    pub genai_endpoint_url: Option<String>,
    pub temperature: f64,
    /// Seed for the offline mock encoder.
    pub mock_seed: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            endpoint_url: None,
            auth_header: "Authorization".into(),
            cache_dir: None,
            genai_endpoint_url: None,
            temperature: sniff_core::providers::DEFAULT_TEMPERATURE,
            mock_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub provider: ProviderConfig,
    /// Guess limits, round budgets and mode flags.
    #[serde(flatten)]
    pub game: GameConfig,
    /// Size of the participant pool the schedule is generated for.
    pub participants: usize,
    pub schedule_seed: u64,
    /// Allowed browser origins; empty allows any.
    pub cors_origins: Vec<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            provider: ProviderConfig::default(),
            game: GameConfig::default(),
            participants: 40,
            schedule_seed: 0,
            cors_origins: Vec::new(),
        }
    }
}

impl ServiceConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// JSON if the first non-blank character is `{`, otherwise `key=value`.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        if text.trim_start().starts_with('{') {
            Ok(serde_json::from_str(text)?)
        } else {
            Ok(serde_json::from_value(key_values(text)?)?)
        }
    }
}

/// Turns `a.b = v` lines into nested JSON. Values that parse as JSON
/// (numbers, booleans, arrays) keep that type; anything else is a string.
/// `#` starts a comment line.
fn key_values(text: &str) -> Result<Value, ConfigError> {
    let mut root = Map::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(ConfigError::Syntax { line: i + 1 });
        }
        let value = serde_json::from_str::<Value>(value)
            .ok()
            .filter(|v| !v.is_string() && !v.is_object())
            .unwrap_or_else(|| Value::String(value.trim_matches('"').to_string()));
        let conflict = || ConfigError::Conflict {
            line: i + 1,
            key: key.to_string(),
        };
        let parts: Vec<&str> = key.split('.').collect();
        let mut node = &mut root;
        for part in &parts[..parts.len() - 1] {
            node = node
                .entry(part.to_string())
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .ok_or_else(conflict)?;
        }
        let last = parts[parts.len() - 1].to_string();
        if node.get(&last).is_some_and(Value::is_object) {
            return Err(conflict());
        }
        node.insert(last, value);
    }
    Ok(Value::Object(root))
}
