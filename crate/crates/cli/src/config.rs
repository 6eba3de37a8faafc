//! Flag and config-file merging, and the provenance header stamped on every
//! output.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Reads the table for `section` from a TOML config file. Sections other
/// than the known subcommands are rejected.
pub fn load_section(path: &Path, section: &str) -> Result<Map<String, Value>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let doc: Map<String, Value> =
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut out = Map::new();
    for (key, value) in doc {
        if !crate::SUBCOMMANDS.contains(&key.as_str()) {
            return Err(CliError::Config(format!("unknown section [{key}] in {}", path.display())));
        }
        if key == section {
            match value {
                Value::Object(m) => out = m,
                _ => return Err(CliError::Config(format!("[{key}] must be a table"))),
            }
        }
    }
    Ok(out)
}

/// Flags that were given override the file; everything else falls back to
/// the file and then to the defaults. Unknown file keys are an error.
pub fn merge<T: Serialize + DeserializeOwned + Default>(flags: &T, file: Map<String, Value>) -> Result<T, CliError> {
    let Value::Object(known) = serde_json::to_value(T::default()).expect("args serialize") else {
        unreachable!("argument structs serialize to objects")
    };
    if let Some(bad) = file.keys().find(|k| !known.contains_key(*k)) {
        return Err(CliError::Config(format!("unknown config key {bad:?}")));
    }
    let Value::Object(given) = serde_json::to_value(flags).expect("args serialize") else {
        unreachable!("argument structs serialize to objects")
    };
    let mut merged = file;
    for (k, v) in given {
        // unset options and switches that were not passed
        if v.is_null() || v == Value::Bool(false) {
            continue;
        }
        merged.insert(k, v);
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Config(e.to_string()))
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_sha256: String,
    pub seed: Option<u64>,
}

impl Provenance {
    pub fn new<T: Serialize>(command: &str, resolved: &T, seed: Option<u64>) -> Self {
        let canonical = serde_json::to_string(resolved).expect("args serialize");
        let digest = Sha256::digest(format!("{command}\n{canonical}").as_bytes());
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
            seed,
        }
    }

    /// Comment lines for CSV and flat-file outputs.
    pub fn header(&self) -> String {
        let seed = self.seed.map(|s| s.to_string()).unwrap_or_else(|| "none".into());
        format!(
            "{} {}\ncommand: {}\nconfig-sha256: {}\nseed: {seed}",
            self.tool, self.version, self.command, self.config_sha256
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Default, Serialize, Deserialize, PartialEq)]
    #[serde(default, rename_all = "kebab-case")]
    struct Args {
        n_opt: Option<usize>,
        b_hat: Option<f64>,
        long_only: bool,
    }

    fn table(text: &str) -> Map<String, Value> {
        toml::from_str(text).unwrap()
    }

    #[test]
    fn flags_win_over_the_file() {
        let flags = Args { n_opt: Some(3), ..Default::default() };
        let got = merge(&flags, table("n-opt = 2\nb-hat = 0.5\nlong-only = true")).unwrap();
        assert_eq!(got, Args { n_opt: Some(3), b_hat: Some(0.5), long_only: true });
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(merge(&Args::default(), table("n-opts = 2")).is_err());
    }

    #[test]
    fn wrong_types_are_rejected() {
        assert!(merge(&Args::default(), table("n-opt = \"two\"")).is_err());
    }

    #[test]
    fn hash_depends_on_config_only() {
        let a = Provenance::new("x", &Args { n_opt: Some(1), ..Default::default() }, Some(4));
        let b = Provenance::new("x", &Args { n_opt: Some(1), ..Default::default() }, Some(4));
        let c = Provenance::new("x", &Args { n_opt: Some(2), ..Default::default() }, Some(4));
        assert_eq!(a.config_sha256, b.config_sha256);
        assert_ne!(a.config_sha256, c.config_sha256);
        assert_eq!(a.config_sha256.len(), 64);
    }
}
