//! Stage orchestration, method selection, overlays and the review HTTP API.
//!
//! Every stage reads its inputs from and writes its artifacts to the
//! directories named in [`RunConfig`], so stages can run in separate processes
//! with an expert's review in between.

pub mod config;
pub mod data;
pub mod overlay;
pub mod select;
pub mod server;
pub mod stages;

use std::fmt;
use std::path::{Path, PathBuf};

pub use config::RunConfig;

/// An upstream artifact is absent; names the stage that produces it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MissingArtifact {
    pub path: PathBuf,
    pub stage: &'static str,
}

impl MissingArtifact {
    pub fn new(path: impl AsRef<Path>, stage: &'static str) -> Self {
        Self {
            path: path.as_ref().to_path_buf(),
            stage,
        }
    }
}

impl fmt::Display for MissingArtifact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} not found; run the `{}` stage first",
            self.path.display(),
            self.stage
        )
    }
}

impl std::error::Error for MissingArtifact {}

/// Returns `path` if it exists, else a [`MissingArtifact`] naming `stage`.
pub fn require(path: impl AsRef<Path>, stage: &'static str) -> anyhow::Result<PathBuf> {
    let path = path.as_ref();
    if path.exists() {
        Ok(path.to_path_buf())
    } else {
        Err(MissingArtifact::new(path, stage).into())
    }
}
