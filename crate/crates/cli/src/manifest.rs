//! Config loading and the per-run manifest.

use std::fmt;
use std::path::{Path, PathBuf};

use multistep::config::ExperimentConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const MANIFEST_VERSION: u32 = 1;

/// Runtime failure reported as a single JSON line on stderr.
#[derive(Debug)]
pub enum CliError {
    Core(multistep::Error),
    Input { path: PathBuf, source: multistep::Error },
    Io { path: PathBuf, source: std::io::Error },
    Check(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) | CliError::Input { source: e, .. } => e.kind(),
            CliError::Io { .. } => "io",
            CliError::Check(_) => "check_failed",
        }
    }

    pub fn to_json(&self) -> String {
        let mut obj = serde_json::json!({
            "error": self.kind(),
            "message": self.to_string(),
        });
        if let CliError::Input { path, .. } | CliError::Io { path, .. } = self {
            obj["path"] = Value::String(path.display().to_string());
        }
        obj.to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Input { path, source } => write!(f, "cannot read {}: {source}", path.display()),
            CliError::Io { path, source } => write!(f, "cannot access {}: {source}", path.display()),
            CliError::Check(msg) => f.write_str(msg),
        }
    }
}

impl From<multistep::Error> for CliError {
    fn from(e: multistep::Error) -> Self {
        CliError::Core(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parse an experiment config, unwrapping it when `text` is a manifest.
pub fn parse_config(text: &str) -> multistep::Result<ExperimentConfig> {
    let mut value: Value = serde_json::from_str(text)?;
    if value.get("manifest_version").is_some() {
        value = value.get_mut("config").map(Value::take).unwrap_or(Value::Null);
    }
    let cfg: ExperimentConfig = serde_json::from_value(value)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> CliResult<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => parse_config(&read_text(p)?).map_err(|source| CliError::Input {
            path: p.to_path_buf(),
            source,
        })?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.reseed(s);
    }
    Ok(cfg)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub tool: String,
    pub dataset_format: u32,
    pub checkpoint_format: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub dataset: u64,
    pub train: u64,
    pub experiment: Vec<u64>,
    #[serde(rename = "loop")]
    pub loop_seeds: Vec<u64>,
}

/// Everything needed to repeat a run: pass the file back as `--config`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub command: String,
    pub config_hash: String,
    pub seeds: Seeds,
    pub versions: Versions,
    pub inputs: Vec<InputFile>,
    pub outputs: Vec<String>,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn new(command: &str, cfg: &ExperimentConfig, inputs: &[&Path], outputs: &[&str]) -> CliResult<Self> {
        let canonical = serde_json::to_string(cfg).map_err(multistep::Error::from)?;
        let inputs = inputs
            .iter()
            .map(|p| {
                let bytes = std::fs::read(p).map_err(|source| CliError::Io {
                    path: p.to_path_buf(),
                    source,
                })?;
                Ok(InputFile {
                    path: p.display().to_string(),
                    sha256: sha256_hex(&bytes),
                })
            })
            .collect::<CliResult<Vec<_>>>()?;
        Ok(Self {
            manifest_version: MANIFEST_VERSION,
            command: command.to_string(),
            config_hash: sha256_hex(canonical.as_bytes()),
            seeds: Seeds {
                dataset: cfg.dataset.seed,
                train: cfg.train.seed,
                experiment: cfg.seeds.clone(),
                loop_seeds: cfg.loop_cfg.seeds.clone(),
            },
            versions: Versions {
                tool: env!("CARGO_PKG_VERSION").to_string(),
                dataset_format: multistep::data::DATASET_VERSION,
                checkpoint_format: multistep::nn::checkpoint::CHECKPOINT_VERSION,
            },
            inputs,
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
            config: cfg.clone(),
        })
    }

    pub fn write(&self, out_dir: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).map_err(multistep::Error::from)?;
        write_text(&out_dir.join("manifest.json"), &(text + "\n"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trips_as_config() {
        let mut cfg = ExperimentConfig::default();
        cfg.reseed(11);
        let m = Manifest::new("train", &cfg, &[], &["model.json"]).unwrap();
        let text = serde_json::to_string(&m).unwrap();
        assert_eq!(parse_config(&text).unwrap(), cfg);
        assert_eq!(m.seeds.experiment, vec![11, 12, 13]);
    }

    #[test]
    fn hash_tracks_the_config() {
        let a = Manifest::new("x", &ExperimentConfig::default(), &[], &[]).unwrap();
        let mut cfg = ExperimentConfig::default();
        cfg.train.lr = 0.5;
        let b = Manifest::new("x", &cfg, &[], &[]).unwrap();
        assert_ne!(a.config_hash, b.config_hash);
        assert_eq!(a.config_hash.len(), 64);
    }

    #[test]
    fn sha256_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn error_json_names_the_path() {
        let e = CliError::Io {
            path: PathBuf::from("missing.json"),
            source: std::io::Error::from(std::io::ErrorKind::NotFound),
        };
        let v: Value = serde_json::from_str(&e.to_json()).unwrap();
        assert_eq!(v["error"], "io");
        assert_eq!(v["path"], "missing.json");
    }
}
