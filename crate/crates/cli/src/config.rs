//! TOML run configurations; every command resolves its config (file plus
//! flag overrides) and snapshots the result next to its outputs.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use lidar_realism::geom::ProjectionModel;

/// Projection grid in file-friendly units (degrees for the elevation span).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectionConfig {
    pub height: usize,
    pub width: usize,
    pub elevation_min_deg: f64,
    pub elevation_max_deg: f64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig {
            height: 32,
            width: 256,
            elevation_min_deg: -20.0,
            elevation_max_deg: 2.0,
        }
    }
}

impl ProjectionConfig {
    pub fn to_model(&self) -> Result<ProjectionModel> {
        ProjectionModel::new(
            self.height,
            self.width,
            self.elevation_min_deg.to_radians(),
            self.elevation_max_deg.to_radians(),
        )
        .context("invalid projection")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    /// Registry preset: `desk` (six datasets) or `minimal` (one per category).
    #[serde(default = "default_preset")]
    pub preset: String,
    pub train: usize,
    #[serde(default)]
    pub val: usize,
    pub test: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub projection: ProjectionConfig,
}

fn default_preset() -> String {
    "desk".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainMetricConfig {
    pub dataset_dir: PathBuf,
    /// Architecture preset: `desk` or `paper`.
    #[serde(default = "default_arch")]
    pub arch: String,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_steps")]
    pub steps: u64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
    #[serde(default)]
    pub seed: u64,
    /// Radial augmentation sigma range for Syn samples; `[0, 0]` disables.
    #[serde(default = "default_augment")]
    pub augment_sigma: [f64; 2],
    /// Validation split name used for the accuracy history.
    #[serde(default = "default_val_split")]
    pub val_split: String,
}

fn default_arch() -> String {
    "desk".into()
}

fn default_lambda() -> f64 {
    0.3
}

fn default_steps() -> u64 {
    2000
}

fn default_batch() -> usize {
    6
}

fn default_eval_every() -> u64 {
    500
}

fn default_augment() -> [f64; 2] {
    [0.002, 0.02]
}

fn default_val_split() -> String {
    "test".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepLambdaConfig {
    #[serde(flatten)]
    pub base: TrainMetricConfig,
    pub lambdas: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreConfig {
    pub checkpoint: PathBuf,
    /// Directory of `.bin` clouds or a materialized dataset directory.
    pub inputs: PathBuf,
    /// Expected checkpoint digest (hex, as printed by train-metric);
    /// mismatching checkpoints are rejected.
    #[serde(default)]
    pub expect_digest: Option<String>,
    #[serde(default)]
    pub per_query: bool,
    #[serde(default)]
    pub ply: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportFeaturesConfig {
    pub checkpoint: PathBuf,
    /// Materialized dataset directory (labels come from the manifest).
    pub dataset_dir: PathBuf,
    #[serde(default = "default_val_split")]
    pub split: String,
    /// `per-query` or `scene-mean`.
    #[serde(default = "default_feature_mode")]
    pub mode: String,
}

fn default_feature_mode() -> String {
    "per-query".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalBaselinesConfig {
    pub pred_dir: PathBuf,
    pub target_dir: PathBuf,
    /// Method label written into the report rows.
    #[serde(default)]
    pub method: Option<String>,
    #[serde(default)]
    pub projection: ProjectionConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpsampleCmdConfig {
    /// `nearest`, `bilinear`, `l1`, `l2`, or `gan`.
    pub mode: String,
    pub f_up: usize,
    /// Directory of high-resolution `.bin` clouds to run the pipeline on.
    pub inputs: PathBuf,
    /// Checkpoint for the learned modes.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub projection: ProjectionConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainUpsamplerConfig {
    /// `l1`, `l2`, or `gan`.
    #[serde(default = "default_sr_mode")]
    pub mode: String,
    #[serde(default = "default_f_up")]
    pub f_up: usize,
    #[serde(default = "default_blocks")]
    pub residual_blocks: usize,
    #[serde(default = "default_sr_steps")]
    pub steps: u64,
    #[serde(default = "default_sr_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    /// Number of generated training scenes.
    #[serde(default = "default_sr_scenes")]
    pub scenes: usize,
    /// Projection of the high-resolution training images.
    #[serde(default = "default_sr_projection")]
    pub projection: ProjectionConfig,
}

fn default_sr_mode() -> String {
    "l1".into()
}

fn default_f_up() -> usize {
    4
}

fn default_blocks() -> usize {
    4
}

fn default_sr_steps() -> u64 {
    800
}

fn default_sr_batch() -> usize {
    4
}

fn default_sr_scenes() -> usize {
    64
}

fn default_sr_projection() -> ProjectionConfig {
    ProjectionConfig {
        height: 16,
        width: 64,
        elevation_min_deg: -25.0,
        elevation_max_deg: -2.0,
    }
}

/// Reads one command's table from a TOML file.
pub fn load_section<T: serde::de::DeserializeOwned>(path: &Path, section: &str) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    let table: toml::Table = text
        .parse()
        .with_context(|| format!("cannot parse {}", path.display()))?;
    let Some(value) = table.get(section) else {
        bail!("config {} has no [{section}] table", path.display());
    };
    value
        .clone()
        .try_into()
        .with_context(|| format!("bad [{section}] table in {}", path.display()))
}
