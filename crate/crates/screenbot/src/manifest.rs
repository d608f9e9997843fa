//! `manifest.json`: the master seed, resolved config and a SHA-256 of every
//! artifact, checked on reload.

use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::io;
use crate::pipeline::{self, Layout};

pub const MANIFEST_FORMAT: &str = "screenbot-manifest";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub role: String,
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub master_seed: u64,
    pub config: ExperimentConfig,
    pub files: Vec<FileEntry>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn relative(layout: &Layout, path: &Path) -> Result<String> {
    let rel = path
        .strip_prefix(layout.root())
        .with_context(|| format!("{} is outside the output directory", path.display()))?;
    Ok(rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/"))
}

impl Manifest {
    /// Hashes the artifacts currently in `layout`. Inputs and models are
    /// required; evaluation outputs are included when present.
    pub fn create(cfg: &ExperimentConfig, layout: &Layout) -> Result<Self> {
        let ds = pipeline::load_dataset(layout)?;
        let n_splits = pipeline::load_splits(layout)?.len();
        let mut wanted: Vec<(&str, std::path::PathBuf, bool)> = vec![
            ("config", layout.config(), true),
            ("catalog", layout.catalog(), true),
            ("cohort", layout.cohort(), false),
            ("transcripts", layout.transcripts(), true),
        ];
        for u in 0..ds.n_users() {
            wanted.push(("simulator", layout.simulator(u), true));
        }
        wanted.push(("simulator_loo", layout.simulator_loo(), false));
        wanted.push(("splits", layout.splits(), true));
        for s in 0..n_splits {
            wanted.push(("classifier", layout.classifier(s), true));
            wanted.push(("agent", layout.agent(s), true));
            wanted.push(("learning_curve", layout.learning_curve(s), false));
        }
        wanted.push(("metrics", layout.metrics(), false));
        wanted.push(("traces", layout.traces(), false));
        wanted.push(("policy_rankings", layout.rankings(), false));
        wanted.push(("report", layout.report(), false));
        let mut files = Vec::new();
        for (role, path, required) in wanted {
            if !path.exists() {
                ensure!(!required, "missing {role} artifact {}", path.display());
                continue;
            }
            files.push(FileEntry {
                role: role.to_string(),
                path: relative(layout, &path)?,
                sha256: sha256_file(&path)?,
            });
        }
        Ok(Self {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            master_seed: cfg.seed,
            config: cfg.clone(),
            files,
        })
    }

    pub fn save(&self, layout: &Layout) -> Result<()> {
        io::write_json(&layout.manifest(), self)
    }

    /// Reads the manifest and checks every listed file against its hash.
    pub fn load(layout: &Layout) -> Result<Self> {
        let m: Manifest = io::read_json(&layout.manifest())?;
        ensure!(
            m.format == MANIFEST_FORMAT && m.version == MANIFEST_VERSION,
            "unsupported manifest {} v{}",
            m.format,
            m.version
        );
        ensure!(m.config.seed == m.master_seed, "manifest seed disagrees with its config");
        for f in &m.files {
            let path = layout.root().join(&f.path);
            if !path.exists() {
                bail!("manifest lists {} ({}) but the file is missing", f.path, f.role);
            }
            let got = sha256_file(&path)?;
            if got != f.sha256 {
                bail!("{} ({}) is corrupt: sha256 {got}, manifest says {}", f.path, f.role, f.sha256);
            }
        }
        Ok(m)
    }

    pub fn entry(&self, path: &str) -> Option<&FileEntry> {
        self.files.iter().find(|f| f.path == path)
    }
}

/// Verifies the artifacts, re-runs evaluation and writes the metrics to
/// `metrics_path`.
pub fn reevaluate(layout: &Layout, metrics_path: &Path) -> Result<Manifest> {
    let m = Manifest::load(layout)?;
    pipeline::evaluate_into(&m.config, layout, metrics_path)?;
    Ok(m)
}
