//! Run manifests: a JSON record of what a command did, written next to its
//! primary outputs so every artifact can be traced to its inputs and seed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::error::Result;

/// One command invocation's provenance record.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    /// Full configuration snapshot (encoder, training, generator — whatever
    /// the command used).
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub timings_seconds: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: impl Into<String>) -> RunManifest {
        RunManifest {
            command: command.into(),
            version: format!("sedr-{}", env!("CARGO_PKG_VERSION")),
            seed: None,
            config: serde_json::Value::Null,
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings_seconds: BTreeMap::new(),
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    pub fn set_config(&mut self, config: &impl serde::Serialize) -> Result<()> {
        self.config = serde_json::to_value(config)
            .map_err(|e| crate::SedrError::Format(format!("manifest config: {e}")))?;
        Ok(())
    }

    pub fn add_input(&mut self, path: &Path) {
        self.inputs.push(path.display().to_string());
    }

    pub fn add_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Run a closure and record its wall-clock time under `label`.
    pub fn time<T>(&mut self, label: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f()?;
        self.timings_seconds.insert(label.to_string(), start.elapsed().as_secs_f64());
        Ok(out)
    }

    /// The default manifest location: `<primary output>.manifest.json`.
    pub fn default_path(primary_output: &Path) -> PathBuf {
        let mut name = primary_output.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        primary_output.with_file_name(name)
    }

    /// Serialize to pretty JSON at `override_path` or the default location.
    pub fn write(&self, primary_output: &Path, override_path: Option<&Path>) -> Result<PathBuf> {
        let path = override_path
            .map(Path::to_path_buf)
            .unwrap_or_else(|| Self::default_path(primary_output));
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| crate::SedrError::Format(format!("manifest: {e}")))?;
        std::fs::write(&path, json + "\n")?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn manifest_lands_next_to_the_primary_output() {
        let dir = tempdir().unwrap();
        let out = dir.path().join("model.ckpt");
        let mut m = RunManifest::new("train");
        m.set_seed(7);
        m.add_output(&out);
        let written = m.write(&out, None).unwrap();
        assert_eq!(written, dir.path().join("model.ckpt.manifest.json"));
        let text = std::fs::read_to_string(&written).unwrap();
        let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed["command"], "train");
        assert_eq!(parsed["seed"], 7);
    }

    #[test]
    fn override_path_wins() {
        let dir = tempdir().unwrap();
        let out = dir.path().join("x.idx");
        let custom = dir.path().join("custom.json");
        let m = RunManifest::new("index");
        let written = m.write(&out, Some(&custom)).unwrap();
        assert_eq!(written, custom);
        assert!(custom.exists());
    }

    #[test]
    fn timings_record_labels() {
        let mut m = RunManifest::new("probe");
        let v = m.time("sleepless", || Ok(42)).unwrap();
        assert_eq!(v, 42);
        assert!(m.timings_seconds.contains_key("sleepless"));
    }
}
