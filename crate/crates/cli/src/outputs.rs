//! Artifact-file plumbing: a run-scoped output directory whose files are
//! either all committed (with a trailing manifest) or all removed.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use coxwatch_core::{Error, Result};

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut hex = String::with_capacity(64);
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}

/// Tracks every file a subcommand writes so a failed run leaves nothing
/// behind and a successful one ends with a manifest naming all artifacts.
pub struct OutputSession {
    dir: PathBuf,
    files: Vec<String>,
}

/// The reproducibility record closing every successful run: with the same
/// configuration file and seed, re-running the subcommand regenerates every
/// listed artifact byte for byte.
#[derive(Debug, Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    subcommand: &'a str,
    seed: u64,
    config_sha256: &'a str,
    outputs: &'a [String],
}

impl OutputSession {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    /// Open `name` for writing inside the session directory and remember it.
    pub fn file(&mut self, name: &str) -> Result<File> {
        let file = File::create(self.dir.join(name))?;
        self.files.push(name.to_string());
        Ok(file)
    }

    /// Serialize `value` as pretty JSON into `name`.
    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut file = self.file(name)?;
        serde_json::to_writer_pretty(&mut file, value)
            .map_err(|e| Error::Format(format!("serializing {name}: {e}")))?;
        file.write_all(b"\n")?;
        Ok(())
    }

    /// Commit the run: write `manifest.json` last and report every artifact
    /// produced. A failed manifest write aborts the whole run instead.
    pub fn finish(
        mut self,
        subcommand: &str,
        seed: u64,
        config_sha256: &str,
    ) -> Result<Vec<String>> {
        let outputs = self.files.clone();
        let manifest = Manifest {
            schema_version: 1,
            subcommand,
            seed,
            config_sha256,
            outputs: &outputs,
        };
        match self.write_json("manifest.json", &manifest) {
            Ok(()) => Ok(std::mem::take(&mut self.files)),
            Err(e) => {
                self.discard();
                Err(e)
            }
        }
    }

    /// Abort the run: best-effort removal of everything written so far.
    pub fn discard(self) {
        for name in &self.files {
            let _ = std::fs::remove_file(self.dir.join(name));
        }
    }
}
