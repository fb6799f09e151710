use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sirf_core::{SirfError, SolverConfig};

/// Failure classes mapped to process exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, configuration or incompatible inputs (exit 2).
    Usage(String),
    /// Anything that went wrong while doing the work (exit 1).
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 2,
            Self::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(m) | Self::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<SirfError> for CliError {
    fn from(e: SirfError) -> Self {
        match e {
            SirfError::ShapeMismatch { .. }
            | SirfError::InvalidParameter(_)
            | SirfError::NotDivisible { .. }
            | SirfError::InvalidShape { .. } => Self::Usage(e.to_string()),
            other => Self::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Runtime(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Contents of the `--config` file.
///
/// ```toml
/// seed = 7
/// rescale = true
///
/// [solver]
/// lambda = 0.5
/// max_outer = 300
///
/// [solver.registration]
/// kind = "affine"
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub reference_mode: bool,
    /// Rescale both fusion inputs jointly to 0–255 (default true).
    pub rescale: Option<bool>,
    pub solver: SolverConfig,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }
}

/// Everything needed to repeat a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub argv: Vec<String>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub scale: Option<usize>,
    pub lambda: Option<f64>,
    pub seed: Option<u64>,
    pub reference_mode: bool,
    pub threads: usize,
    pub config: FileConfig,
    pub started_unix: f64,
    pub finished_unix: f64,
    /// Command-specific results such as the recovered warp.
    pub results: serde_json::Value,
}

pub fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// `path` with `.manifest.json` appended to its file name.
pub fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    path.with_file_name(name)
}
