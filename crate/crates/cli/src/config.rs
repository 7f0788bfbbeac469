use std::path::{Path, PathBuf};

use aerotree_core::{FusionParams, MetricParams, PreprocessParams, ReconnectParams};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Input and output locations. Relative paths in a config file are taken
/// relative to the directory holding that file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub ct: Option<PathBuf>,
    pub probability_maps: Vec<PathBuf>,
    pub lung_mask: Option<PathBuf>,
    pub gt_mask: Option<PathBuf>,
    /// Binary prediction fed to postprocess or evaluate.
    pub pred_mask: Option<PathBuf>,
    /// CSV with columns case_id, pred_path, gt_path, lung_path.
    pub manifest: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    /// Identifier used for single-case evaluation.
    pub case_id: String,
    pub preprocess: PreprocessParams,
    pub fusion: FusionParams,
    pub reconnect: ReconnectParams,
    pub metrics: MetricParams,
    /// Cases evaluated concurrently.
    pub parallel_cases: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            case_id: "case".into(),
            preprocess: PreprocessParams::default(),
            fusion: FusionParams::default(),
            reconnect: ReconnectParams::default(),
            metrics: MetricParams::default(),
            parallel_cases: 1,
        }
    }
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("cannot parse config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let p = &mut cfg.paths;
        for slot in [&mut p.ct, &mut p.lung_mask, &mut p.gt_mask, &mut p.pred_mask, &mut p.manifest, &mut p.output_dir]
            .into_iter()
            .flatten()
        {
            rebase(base, slot);
        }
        p.probability_maps.iter_mut().for_each(|m| rebase(base, m));
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let config = |e: aerotree_core::Error| CliError::Config(e.to_string());
        self.preprocess.validate().map_err(config)?;
        self.fusion.validate().map_err(config)?;
        self.reconnect.validate().map_err(config)?;
        self.metrics.validate().map_err(config)?;
        if self.parallel_cases == 0 {
            return Err(CliError::Config("parallel_cases must be at least 1".into()));
        }
        if self.case_id.is_empty() {
            return Err(CliError::Config("case_id must not be empty".into()));
        }
        Ok(())
    }

    pub fn output_dir(&self) -> PathBuf {
        self.paths.output_dir.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    /// Creates the output directory and returns the path of `name` inside it.
    pub fn output(&self, name: &str) -> Result<PathBuf> {
        let dir = self.output_dir();
        std::fs::create_dir_all(&dir).map_err(|e| CliError::write(&dir, e))?;
        Ok(dir.join(name))
    }
}

/// An input that must be configured and must exist.
pub fn require<'a>(what: &str, path: Option<&'a PathBuf>) -> Result<&'a Path> {
    let p = path.ok_or_else(|| CliError::Config(format!("no {what} given")))?;
    if !p.is_file() {
        return Err(CliError::Config(format!("{what} {} does not exist", p.display())));
    }
    Ok(p)
}
