//! Run manifests: one `manifest.json` per output directory.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputHash {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    /// Fully resolved settings after config-file and flag merging.
    pub config: serde_json::Value,
    pub inputs: Vec<InputHash>,
    pub seeds: Vec<u64>,
    pub outputs: Vec<PathBuf>,
    pub started_unix: u64,
    pub wall_clock_seconds: f64,
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let mut f = BufReader::new(File::open(path).map_err(|e| CliError::io(path, e))?);
    let mut h = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| CliError::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Started when a command begins; finished once its outputs exist.
pub struct ManifestBuilder {
    command: String,
    started: Instant,
    started_unix: u64,
    inputs: Vec<InputHash>,
}

impl ManifestBuilder {
    pub fn start(command: &str) -> Self {
        ManifestBuilder {
            command: command.to_string(),
            started: Instant::now(),
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            inputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        self.inputs.push(InputHash {
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn finish(
        self,
        config: &impl Serialize,
        seeds: Vec<u64>,
        out_dir: &Path,
        mut outputs: Vec<PathBuf>,
    ) -> CliResult<PathBuf> {
        outputs.sort();
        let manifest = RunManifest {
            command: self.command,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: serde_json::to_value(config).map_err(|e| CliError::Json {
                path: out_dir.join(MANIFEST_FILE),
                source: e,
            })?,
            inputs: self.inputs,
            seeds,
            outputs,
            started_unix: self.started_unix,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        let path = out_dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashes_known_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x");
        std::fs::write(&p, b"abc").unwrap();
        assert_eq!(
            sha256_file(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.csv");
        std::fs::write(&input, b"a,b\n").unwrap();
        let mut b = ManifestBuilder::start("train");
        b.input(&input).unwrap();
        let path = b
            .finish(
                &serde_json::json!({"k": 2}),
                vec![3],
                dir.path(),
                vec![dir.path().join("m.json")],
            )
            .unwrap();
        let m: RunManifest = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(m.command, "train");
        assert_eq!(m.seeds, vec![3]);
        assert_eq!(m.inputs[0].sha256.len(), 64);
        assert_eq!(m.config["k"], 2);
    }
}
