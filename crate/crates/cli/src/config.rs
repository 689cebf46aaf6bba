use std::fmt;
use std::path::Path;

use dintr_core::config::RunConfig;

/// Failure classes mapped to process exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Unreadable, malformed or invalid configuration (exit 2).
    Config(String),
    /// Anything that fails after the configuration was accepted (exit 3).
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime(e) => write!(f, "error: {e:#}"),
        }
    }
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.into())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Parses a run configuration, naming the offending key path on failure.
pub fn parse_config(text: &str) -> CliResult<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config(format!("at `{path}`: {}", e.inner()))
    })?;
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}

/// Loads the configuration file, or the defaults when none is given, then
/// applies a seed override.
pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> CliResult<RunConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            parse_config(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}
