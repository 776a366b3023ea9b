//! Pipeline configuration: a preset, optionally overlaid by a TOML file, then by flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tapgen_core::boundary::CbgConfig;
use tapgen_core::data::{Subset, SyntheticConfig};
use tapgen_core::model::ModelConfig;
use tapgen_core::postprocess::SoftNmsConfig;
use tapgen_core::relation::PrbConfig;
use tapgen_core::training::{FitConfig, SamplerConfig};
use tapgen_core::{Error, Result};

const DESK: &str = include_str!("../presets/desk.toml");
const PAPER: &str = include_str!("../presets/paper.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

impl Preset {
    fn text(self) -> &'static str {
        match self {
            Preset::Desk => DESK,
            Preset::Paper => PAPER,
        }
    }
}

/// How a video is cut into fixed-length model inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowMode {
    /// Linearly resample the whole video to one window.
    Rescale,
    /// Overlapping windows over the native snippet sequence.
    Sliding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suppression {
    Soft,
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleMode {
    /// Concatenate detection files, then per-class Soft-NMS.
    Concat,
    /// Route each video to one detection file by its duration.
    Multiscale,
    /// Weighted average of several models' score maps.
    Maps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelWidths {
    pub base_width: usize,
    pub node_width: usize,
    pub kernel_size: usize,
    pub proposal_channels: usize,
    pub samples: usize,
    pub reduced_width: usize,
    pub attention_width: usize,
    pub attention: bool,
    pub boundary_extension: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub steps: usize,
    pub step_size: f64,
    pub batch_windows: usize,
    pub samples_per_window: usize,
    pub scale_balanced: bool,
    pub beta: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    pub lambda: f64,
    pub scale_regions: Vec<(f64, f64)>,
    pub pos_threshold: f64,
    pub neg_threshold: f64,
    pub target_pos_neg_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PostprocessSection {
    pub suppression: Suppression,
    pub sigma_nms: f64,
    pub greedy_threshold: f64,
    pub top_k: usize,
    pub class_top_k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub mode: EnsembleMode,
    pub weights: Vec<f64>,
    pub scales: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub n_videos: usize,
    pub n_classes: usize,
    pub feature_dim: usize,
    pub snippet_range: (usize, usize),
    pub stride_frames: usize,
    pub fps: f64,
    pub validation_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub data_dir: PathBuf,
    pub model: PathBuf,
    pub trace: PathBuf,
    pub detections: PathBuf,
    pub report: PathBuf,
    /// When set, inference also writes per-video heatmaps and score maps here.
    #[serde(default)]
    pub dump_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Worker threads for per-video inference.
    pub threads: usize,
    /// Window length `l_w` in cells.
    pub window_length: usize,
    /// Maximum proposal duration `D`; defaults to `window_length`.
    #[serde(default)]
    pub max_duration: Option<usize>,
    pub window_mode: WindowMode,
    pub window_overlap: f64,
    pub infer_subset: Subset,
    pub model: ModelWidths,
    pub training: TrainingSection,
    pub sampler: SamplerSection,
    pub postprocess: PostprocessSection,
    pub ensemble: EnsembleSection,
    pub synth: SynthSection,
    pub paths: Paths,
}

fn parse_table(text: &str, origin: &Path) -> Result<toml::Table> {
    text.parse::<toml::Table>()
        .map_err(|e| Error::parse(origin, e.to_string()))
}

/// Recursively overlays `top` onto `base`; tables merge, everything else replaces.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

impl PipelineConfig {
    pub fn preset(preset: Preset) -> Self {
        Self::from_table(parse_table(preset.text(), Path::new("<preset>")).expect("preset parses"), Path::new("<preset>"))
            .expect("preset is complete")
    }

    /// Preset values overlaid by the TOML file at `path`, if any.
    pub fn load(preset: Preset, path: Option<&Path>) -> Result<Self> {
        let mut table = parse_table(preset.text(), Path::new("<preset>"))?;
        let origin = path.unwrap_or(Path::new("<preset>"));
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            merge(&mut table, parse_table(&text, path)?);
        }
        Self::from_table(table, origin)
    }

    fn from_table(table: toml::Table, origin: &Path) -> Result<Self> {
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::parse(origin, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn max_duration(&self) -> usize {
        self.max_duration.unwrap_or(self.window_length)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_length < 3 {
            return Err(Error::config("window_length must be at least 3"));
        }
        let d = self.max_duration();
        if d == 0 || d > self.window_length {
            return Err(Error::config(format!(
                "max_duration must lie in 1..={}, got {d}",
                self.window_length
            )));
        }
        if self.threads == 0 {
            return Err(Error::config("threads must be at least 1"));
        }
        if !(self.postprocess.sigma_nms > 0.0) {
            return Err(Error::config("sigma_nms must be positive"));
        }
        if self.postprocess.class_top_k == 0 {
            return Err(Error::config("class_top_k must be at least 1"));
        }
        self.sampler_config().validate()
    }

    pub fn model_config(&self, input_dim: usize) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            cbg: CbgConfig {
                input_dim,
                base_width: m.base_width,
                node_width: m.node_width,
                kernel_size: m.kernel_size,
            },
            prb: PrbConfig {
                base_width: m.base_width,
                proposal_channels: m.proposal_channels,
                samples: m.samples,
                reduced_width: m.reduced_width,
                attention_width: m.attention_width,
                boundary_extension: m.boundary_extension,
                attention: m.attention,
            },
            max_duration: self.max_duration(),
        }
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        let s = &self.sampler;
        SamplerConfig {
            lambda: s.lambda,
            scale_regions: s.scale_regions.clone(),
            pos_threshold: s.pos_threshold,
            neg_threshold: s.neg_threshold,
            target_pos_neg_ratio: s.target_pos_neg_ratio,
            seed: self.seed,
        }
    }

    pub fn fit_config(&self) -> FitConfig {
        let t = &self.training;
        FitConfig {
            steps: t.steps,
            step_size: t.step_size,
            seed: self.seed,
            batch_windows: t.batch_windows,
            samples_per_window: t.samples_per_window,
            scale_balanced: t.scale_balanced,
            sampler: self.sampler_config(),
            beta: t.beta,
            gamma: t.gamma,
        }
    }

    pub fn synthetic_config(&self) -> SyntheticConfig {
        let s = &self.synth;
        SyntheticConfig {
            seed: self.seed,
            n_videos: s.n_videos,
            n_classes: s.n_classes,
            feature_dim: s.feature_dim,
            snippet_range: s.snippet_range,
            stride_frames: s.stride_frames,
            fps: s.fps,
            validation_fraction: s.validation_fraction,
            ..SyntheticConfig::default()
        }
    }

    pub fn soft_nms_config(&self) -> SoftNmsConfig {
        SoftNmsConfig {
            sigma: self.postprocess.sigma_nms,
            keep_threshold: 0.0,
            max_keep: Some(self.postprocess.top_k),
        }
    }
}
