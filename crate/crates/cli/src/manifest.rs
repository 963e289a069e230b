//! Sidecar record of what a run did, written as `<out>.manifest.json`.
//! Re-running the recorded command with the recorded config and seed
//! reproduces the recorded outputs byte for byte.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::Failure;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: &'static str,
    pub version: &'static str,
    pub seed: Option<u64>,
    /// Fully resolved settings after config files and flag overrides.
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub duration_seconds: f64,
}

pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut os = out.as_os_str().to_os_string();
    os.push(".manifest.json");
    PathBuf::from(os)
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest has no non-serializable fields")
    }

    /// Writes the manifest next to the command's main output.
    pub fn write_sidecar(&self, out: &Path) -> Result<(), Failure> {
        let path = sidecar_path(out);
        std::fs::write(&path, self.to_json() + "\n")
            .map_err(|e| Failure::Data(format!("writing {}: {e}", path.display())))
    }
}
