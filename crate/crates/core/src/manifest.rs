//! Provenance record written next to command outputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kv::KeyValues;

pub const RUN_MANIFEST_FILE: &str = "run.manifest";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn sha256_file(path: &Path) -> Result<String> {
    std::fs::read(path).map(|b| sha256_hex(&b)).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub config: KeyValues,
    pub seed: u64,
    pub inputs: Vec<(PathBuf, String)>,
    pub outputs: Vec<(PathBuf, String)>,
    pub wall_time: Duration,
}

impl RunManifest {
    pub fn new(command: &str, config: KeyValues, seed: u64) -> RunManifest {
        RunManifest {
            tool_version: format!("natlab {}", env!("CARGO_PKG_VERSION")),
            command: command.to_string(),
            config,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            wall_time: Duration::ZERO,
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push((path.to_path_buf(), sha256_file(path)?));
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push((path.to_path_buf(), sha256_file(path)?));
        Ok(())
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new("run manifest");
        kv.set("tool", &self.tool_version);
        kv.set("command", &self.command);
        kv.set("seed", self.seed);
        for (k, v) in self.config.entries() {
            kv.set(&format!("config.{k}"), v);
        }
        for (p, h) in &self.inputs {
            kv.set(&format!("input.{}", p.display()), h);
        }
        for (p, h) in &self.outputs {
            kv.set(&format!("output.{}", p.display()), h);
        }
        kv.set("wall_time_secs", format!("{:.3}", self.wall_time.as_secs_f64()));
        kv
    }

    /// Atomic write of `run.manifest` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        self.write_at(&dir.join(RUN_MANIFEST_FILE))
    }

    /// Atomic write to `path`.
    pub fn write_at(&self, path: &Path) -> Result<PathBuf> {
        self.to_kv().write(path)?;
        Ok(path.to_path_buf())
    }

    /// Sibling manifest path for a single-file artifact: `x.csv` -> `x.csv.manifest`.
    pub fn path_for(artifact: &Path) -> PathBuf {
        let mut name = artifact.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".manifest");
        artifact.with_file_name(name)
    }

    /// The recorded config, with the `config.` prefix removed.
    pub fn config_of(kv: &KeyValues) -> KeyValues {
        let mut out = KeyValues::new(kv.origin());
        for (k, v) in kv.entries() {
            if let Some(rest) = k.strip_prefix("config.") {
                out.set(rest, v);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn round_trip_config() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("x.txt");
        std::fs::write(&f, "hi").unwrap();
        let mut cfg = KeyValues::new("t");
        cfg.set("loss", "ctc");
        let mut m = RunManifest::new("train", cfg, 4);
        m.add_output(&f).unwrap();
        let path = m.write(dir.path()).unwrap();
        let kv = KeyValues::read(&path).unwrap();
        assert_eq!(kv.get("command"), Some("train"));
        assert_eq!(RunManifest::config_of(&kv).get("loss"), Some("ctc"));
        assert!(kv.keys().any(|k| k.starts_with("output.")));
        assert!(m.add_input(&dir.path().join("missing")).is_err());
    }
}
