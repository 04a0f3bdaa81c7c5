//! Config-file overrides, output bookkeeping and the run manifest.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Map, Value};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] cmps_core::Error),
    #[error("{0}")]
    Config(String),
}

impl CliError {
    /// 2 for bad input, 3 for numerical failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if !e.is_input_error() => 3,
            _ => 2,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

pub struct Context {
    pub out_dir: PathBuf,
    overrides: Option<Map<String, Value>>,
    config_path: Option<PathBuf>,
    threads: Option<usize>,
}

impl Context {
    pub fn new(out_dir: PathBuf, config: Option<PathBuf>, threads: Option<usize>) -> Result<Self, CliError> {
        let overrides = match &config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                let table: toml::Table =
                    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                let value = serde_json::to_value(table).map_err(|e| CliError::Config(e.to_string()))?;
                match value {
                    Value::Object(m) => Some(m),
                    _ => None,
                }
            }
            None => None,
        };
        Ok(Context { out_dir, overrides, config_path: config, threads })
    }

    /// Applies config-file keys on top of the parsed flags. Keys in a table
    /// named after `command` win over top-level ones.
    pub fn merge<T: Serialize + DeserializeOwned>(&self, command: &str, args: T) -> Result<T, CliError> {
        let Some(over) = &self.overrides else { return Ok(args) };
        let mut base = match serde_json::to_value(&args).map_err(|e| CliError::Config(e.to_string()))? {
            Value::Object(m) => m,
            _ => return Ok(args),
        };
        let mut apply = |table: &Map<String, Value>| -> Result<(), CliError> {
            for (k, v) in table {
                if v.is_object() {
                    continue;
                }
                let key = k.replace('-', "_");
                if !base.contains_key(&key) {
                    return Err(CliError::Config(format!("unknown config key '{k}' for {command}")));
                }
                base.insert(key, v.clone());
            }
            Ok(())
        };
        apply(over)?;
        if let Some(Value::Object(section)) = over.get(command) {
            apply(section)?;
        }
        serde_json::from_value(Value::Object(base)).map_err(|e| CliError::Config(format!("config: {e}")))
    }

    pub fn prepare(&self) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.out_dir)?;
        Ok(())
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    /// Writes `manifest.json`: everything needed to rerun the command and
    /// obtain identical files. No timestamps, so reruns match byte for byte.
    pub fn write_manifest<T: Serialize>(&self, command: &str, args: &T, outputs: &[String]) -> Result<(), CliError> {
        let manifest = json!({
            "tool": "cmps",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "config": args,
            "config_file": self.config_path.as_deref().map(Path::display).map(|d| d.to_string()),
            "threads": self.threads,
            "rng": "ChaCha8, seeded with the run seed, one stream per trajectory index",
            "outputs": outputs,
        });
        let text = serde_json::to_string_pretty(&manifest).map_err(cmps_core::Error::from)? + "\n";
        std::fs::write(self.path("manifest.json"), text)?;
        Ok(())
    }
}
