use std::fs::File;
use std::io::{self, BufReader};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use multiea::Result;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to trace an artifact back to its inputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: serde_json::Value,
    pub seeds: Vec<(String, u64)>,
    pub threads: usize,
    pub inputs: Vec<Fingerprint>,
    pub outputs: Vec<PathBuf>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    let mut hasher = Sha256::new();
    io::copy(&mut BufReader::new(File::open(path)?), &mut hasher)?;
    Ok(hex::encode(hasher.finalize()))
}

impl RunManifest {
    pub fn new(command: &str, config: &impl Serialize) -> Self {
        Self {
            command: command.to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
            seeds: Vec::new(),
            threads: rayon::current_num_threads(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_unix: unix_now(),
            finished_unix: 0,
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(Fingerprint {
            path: path.to_owned(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_owned());
    }

    pub fn write(mut self, path: &Path) -> Result<()> {
        self.finished_unix = unix_now();
        let text = serde_json::to_string_pretty(&self).expect("manifest serializes");
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    #[cfg(test)]
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| multiea::Error::data(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashes_known_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.txt");
        std::fs::write(&p, "abc").unwrap();
        assert_eq!(
            sha256_file(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        let mut m = RunManifest::new("train", &serde_json::json!({"dim": 8}));
        m.seeds.push(("rng_seed".into(), 3));
        m.output(Path::new("run/checkpoint.bin"));
        m.write(&p).unwrap();
        let back = RunManifest::read(&p).unwrap();
        assert_eq!(back.command, "train");
        assert_eq!(back.config["dim"], 8);
        assert!(back.finished_unix >= back.started_unix);
    }
}
