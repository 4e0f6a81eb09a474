//! Run manifests: the arguments of a run plus digests of everything it read
//! and wrote, so the run can be repeated and checked byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::commands::{DenoiseArgs, GenArgs, InitArgs};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "command", content = "args", rename_all = "lowercase")]
pub enum Run {
    Gen(GenArgs),
    Init(InitArgs),
    Denoise(DenoiseArgs),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub engine: String,
    #[serde(flatten)]
    pub run: Run,
    pub inputs: BTreeMap<String, FileDigest>,
    pub outputs: BTreeMap<String, FileDigest>,
}

/// Files a run read and wrote, keyed by role.
#[derive(Default, Debug)]
pub struct RunFiles {
    pub inputs: Vec<(&'static str, PathBuf)>,
    pub outputs: Vec<(&'static str, PathBuf)>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn digests(files: &[(&'static str, PathBuf)]) -> Result<BTreeMap<String, FileDigest>> {
    files
        .iter()
        .map(|(role, path)| {
            Ok((
                role.to_string(),
                FileDigest {
                    path: path.clone(),
                    sha256: sha256_file(path)?,
                },
            ))
        })
        .collect()
}

impl RunManifest {
    pub fn new(run: Run, files: &RunFiles) -> Result<Self> {
        Ok(Self {
            engine: format!("vidbuf {}", env!("CARGO_PKG_VERSION")),
            run,
            inputs: digests(&files.inputs)?,
            outputs: digests(&files.outputs)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }
}

/// `out.seq` -> `out.seq.manifest.json`.
pub fn manifest_path_for(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}
