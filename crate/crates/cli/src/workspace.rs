//! Artifact locations inside the work directory.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;

use cosfire_hash::imaging::Split;

/// Bad invocation: missing flags, unknown files named on the command line.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Upstream stage output that has not been produced yet.
#[derive(Debug)]
pub struct MissingArtifact {
    pub what: &'static str,
    pub path: PathBuf,
    pub produced_by: &'static str,
}

impl fmt::Display for MissingArtifact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} not found: {} (run `cosfire-hash {}` first)",
            self.what,
            self.path.display(),
            self.produced_by
        )
    }
}

impl std::error::Error for MissingArtifact {}

pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }

    pub fn clipped_dir(&self) -> PathBuf {
        self.root.join("clipped")
    }

    pub fn clipped_manifest(&self) -> PathBuf {
        self.clipped_dir().join("manifest.csv")
    }

    pub fn bank(&self) -> PathBuf {
        self.root.join("bank.json")
    }

    pub fn descriptors(&self, split: Split) -> PathBuf {
        self.root.join("descriptors").join(format!("{split}.dscr"))
    }

    pub fn model(&self) -> PathBuf {
        self.root.join("model.chsh")
    }

    pub fn threshold(&self) -> PathBuf {
        self.root.join("threshold.json")
    }

    pub fn codes(&self, split: Split) -> PathBuf {
        self.root.join("codes").join(format!("{split}.codes"))
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.reports().join(name)
    }

    /// Fails with a message naming the artifact and the command that makes it.
    pub fn require(&self, path: PathBuf, what: &'static str, produced_by: &'static str) -> anyhow::Result<PathBuf> {
        if path.exists() {
            Ok(path)
        } else {
            Err(MissingArtifact { what, path, produced_by }.into())
        }
    }

    pub fn ensure_parent(path: &Path) -> anyhow::Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        Ok(())
    }
}
