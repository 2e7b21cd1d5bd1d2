//! Pipeline configuration file (TOML) and the environment overrides layered
//! on top of it. Command-line flags win over both.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub const ENV_CONFIG: &str = "FSA_CONFIG";
pub const ENV_ENDPOINT: &str = "FSA_ENDPOINT";
pub const ENV_API_KEY: &str = "FSA_API_KEY";
pub const ENV_MODEL: &str = "FSA_MODEL";
pub const ENV_TEACHER: &str = "FSA_TEACHER";
pub const ENV_CACHE: &str = "FSA_CACHE";
pub const ENV_BUDGET: &str = "FSA_BUDGET";
pub const ENV_SEED: &str = "FSA_SEED";
pub const ENV_MAX_IN_FLIGHT: &str = "FSA_MAX_IN_FLIGHT";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("environment variable {var}={value:?}: {msg}")]
    Env {
        var: &'static str,
        value: String,
        msg: String,
    },
    #[error("paths.{a} and paths.{b} are both {path}")]
    SamePath { a: String, b: String, path: PathBuf },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointSettings {
    pub url: Option<String>,
    pub api_key: Option<String>,
    pub timeout_secs: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSettings {
    pub reviews: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    /// Root holding one canonical directory per dataset name.
    pub datasets: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub endpoint: EndpointSettings,
    pub teacher: Option<String>,
    pub model: Option<String>,
    pub scheme: Option<String>,
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub variants: Option<Vec<String>>,
    pub budget: Option<usize>,
    pub max_in_flight: Option<usize>,
    pub max_attempts: Option<u32>,
    pub backoff_ms: Option<u64>,
    pub temperature: Option<f32>,
    pub max_new_tokens: Option<u32>,
    #[serde(default)]
    pub paths: PathSettings,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: PipelineConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        cfg.check_paths()?;
        Ok(cfg)
    }

    /// Loads `explicit`, else `$FSA_CONFIG`, else an empty config.
    pub fn discover(explicit: Option<&Path>) -> Result<Self, ConfigError> {
        match explicit {
            Some(p) => Self::load(p),
            None => match std::env::var_os(ENV_CONFIG) {
                Some(p) => Self::load(Path::new(&p)),
                None => Ok(Self::default()),
            },
        }
    }

    fn check_paths(&self) -> Result<(), ConfigError> {
        let p = &self.paths;
        let named = [
            ("reviews", &p.reviews),
            ("cache", &p.cache),
            ("corpus", &p.corpus),
            ("datasets", &p.datasets),
        ];
        for (i, (a, pa)) in named.iter().enumerate() {
            for (b, pb) in &named[i + 1..] {
                if let (Some(x), Some(y)) = (pa, pb) {
                    if x == y {
                        return Err(ConfigError::SamePath {
                            a: a.to_string(),
                            b: b.to_string(),
                            path: x.clone(),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// `flag`, else the parsed environment variable, else `file`.
pub fn layered<T: FromStr>(
    flag: Option<T>,
    var: &'static str,
    file: Option<T>,
) -> Result<Option<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(var) {
        Ok(value) if !value.is_empty() => value
            .parse()
            .map(Some)
            .map_err(|e: T::Err| ConfigError::Env {
                var,
                value,
                msg: e.to_string(),
            }),
        _ => Ok(file),
    }
}
