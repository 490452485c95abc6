use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use volterra_ident::prediction::{BAND_STREAM, TRUTH_STREAM};
use volterra_ident::simulator::derive_seed;

use crate::config::ExperimentConfig;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub files: Vec<PathBuf>,
    pub seconds: f64,
}

/// What was run, with which seeds, and where the outputs are.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub versions: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    /// Load the manifest in `config.out`, or start a new one. The config echo
    /// and seeds always reflect the current invocation.
    pub fn open(config: &ExperimentConfig) -> Result<Self> {
        let path = config.out.join(MANIFEST_FILE);
        let stages = if path.is_file() {
            let old: RunManifest = serde_json::from_reader(File::open(&path)?)
                .with_context(|| format!("reading {}", path.display()))?;
            old.stages
        } else {
            BTreeMap::new()
        };
        let versions = BTreeMap::from([
            // Workspace crates share one version.
            ("volterra-ident".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ("volterra-ident-cli".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ]);
        let s = config.seed;
        let seeds = BTreeMap::from([
            ("master".to_string(), s),
            ("measurements".to_string(), s),
            ("network".to_string(), config.fit.network.seed),
            ("band".to_string(), derive_seed(s, BAND_STREAM)),
            ("truth".to_string(), derive_seed(s, TRUTH_STREAM)),
        ]);
        Ok(Self {
            config: config.clone(),
            versions,
            seeds,
            stages,
        })
    }

    /// Record a finished stage and rewrite the manifest. Fails if a listed
    /// file is missing or empty.
    pub fn record(&mut self, stage: &str, files: Vec<PathBuf>, seconds: f64) -> Result<()> {
        for f in &files {
            let len = fs::metadata(f).with_context(|| format!("stage {stage} output {}", f.display()))?.len();
            anyhow::ensure!(len > 0, "stage {stage} wrote an empty file {}", f.display());
        }
        self.stages.insert(stage.to_string(), StageRecord { files, seconds });
        self.write(&self.config.out.join(MANIFEST_FILE))
    }

    fn write(&self, path: &Path) -> Result<()> {
        let w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }
}
