//! Scenario runner behind the `photonq` executable.

pub mod config;
pub mod output;
mod scenarios;

use config::{Kind, Params, RawConfig, ScenarioConfig, CONFIG_VERSION};
use output::{ErrorReport, Manifest, OutputDir};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("numerical contract violated: {0}")]
    Numerical(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "validation",
            CliError::Numerical(_) => "numerical",
            CliError::Io(_) => "io",
        }
    }

    /// One-line JSON for stderr.
    pub fn report_json(&self) -> String {
        serde_json::json!({ "error": ErrorReport::from(self) }).to_string()
    }
}

pub(crate) fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

/// A request assembled from the command line.
#[derive(Debug, Clone, Default)]
pub struct Invocation {
    pub config_text: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// Parameter values from subcommand flags; they replace config entries.
    pub overrides: serde_json::Map<String, serde_json::Value>,
}

/// Merges the config document, flags and defaults into a typed scenario.
/// Flags win over the document; the seed defaults to 0 and the output
/// directory to `out/<kind>`.
pub fn resolve(kind: Kind, inv: &Invocation) -> Result<(ScenarioConfig, PathBuf), CliError> {
    let raw = match &inv.config_text {
        Some(text) => Some(RawConfig::parse(text)?),
        None => None,
    };
    if let Some(r) = &raw {
        if r.kind != kind {
            return Err(CliError::Validation(format!("config kind {:?} does not match subcommand {}", r.kind.name(), kind.name())));
        }
    }
    let mut params = match raw.as_ref().and_then(|r| r.params.clone()) {
        Some(serde_json::Value::Object(m)) => m,
        Some(_) => return Err(CliError::Validation("params must be a JSON object".into())),
        None => serde_json::Map::new(),
    };
    for (k, v) in &inv.overrides {
        params.insert(k.clone(), v.clone());
    }
    let params = Params::parse(kind, Some(serde_json::Value::Object(params)))?;
    let seed = inv.seed.or(raw.as_ref().and_then(|r| r.seed)).unwrap_or(0);
    let out = inv
        .out
        .clone()
        .or(raw.as_ref().and_then(|r| r.out.clone()))
        .unwrap_or_else(|| PathBuf::from("out").join(kind.name()));
    Ok((ScenarioConfig { kind, version: CONFIG_VERSION, seed, params }, out))
}

/// Runs a scenario into `out` and writes its manifest, also when the run fails.
pub fn run_scenario(cfg: &ScenarioConfig, out: &Path) -> Result<Manifest, CliError> {
    let mut dir = OutputDir::create(out)?;
    let result = scenarios::run(cfg, &mut dir);
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        tool_version: env!("CARGO_PKG_VERSION"),
        kind: cfg.kind.name(),
        config_version: cfg.version,
        seed: cfg.seed,
        status: if result.is_ok() { "ok" } else { "failed" },
        error: result.as_ref().err().map(ErrorReport::from),
        config: serde_json::to_value(&cfg.params).map_err(|e| CliError::Io(e.to_string()))?,
        outputs: Vec::new(),
    };
    let manifest = dir.finish(manifest)?;
    result.map(|_| manifest)
}
