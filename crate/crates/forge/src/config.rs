//! JSON run configuration: a config file supplies values, command-line flags
//! override them, and the merged result is written next to every output.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{ForgeError, Result};

pub const RESOLVED_NAME: &str = "resolved_config.json";

/// Overlays the flags the user set onto the JSON object in `file`.
///
/// Unset flags serialize as `null` (options) or `false` (switches) and are
/// ignored, so the file supplies them.
pub fn merge<T: Serialize + DeserializeOwned>(flags: &T, file: Option<&Path>) -> Result<T> {
    let over = serde_json::to_value(flags).map_err(config_err)?;
    let Some(path) = file else {
        return serde_json::from_value(over).map_err(config_err);
    };
    let text = std::fs::read_to_string(path)?;
    let mut base: serde_json::Value = serde_json::from_str(&text).map_err(config_err)?;
    match (&mut base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            b.extend(o.into_iter().filter(|(_, v)| !v.is_null() && *v != serde_json::Value::Bool(false)))
        }
        _ => return Err(ForgeError::Config(format!("{}: config must be a JSON object", path.display()))),
    }
    serde_json::from_value(base).map_err(|e| ForgeError::Config(format!("{}: {e}", path.display())))
}

/// Writes `resolved_config.json` into `dir`, creating it if needed.
pub fn write_resolved<T: Serialize>(dir: &Path, resolved: &T) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let text = serde_json::to_string_pretty(resolved).map_err(config_err)?;
    std::fs::write(dir.join(RESOLVED_NAME), text + "\n")?;
    Ok(())
}

fn config_err(e: serde_json::Error) -> ForgeError {
    ForgeError::Config(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Serialize, Deserialize, PartialEq)]
    #[serde(default, deny_unknown_fields)]
    struct Flags {
        seed: Option<u64>,
        n: Option<usize>,
        fast: bool,
    }

    impl Default for Flags {
        fn default() -> Self {
            Self { seed: None, n: None, fast: false }
        }
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"seed": 3, "n": 10, "fast": true}"#).unwrap();
        let m = merge(&Flags { seed: Some(7), ..Flags::default() }, Some(&p)).unwrap();
        assert_eq!(m, Flags { seed: Some(7), n: Some(10), fast: true });
        std::fs::write(&p, "[1]").unwrap();
        assert!(merge(&Flags::default(), Some(&p)).is_err());
        std::fs::write(&p, r#"{"sede": 3}"#).unwrap();
        assert!(merge(&Flags::default(), Some(&p)).is_err());
    }
}
