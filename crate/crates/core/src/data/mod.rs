//! Datasets, annotation and feature files, observation windows and training labels.

mod io;
mod labels;
mod synth;
mod windows;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::Matrix2D;
use crate::segment::Segment;

pub use io::{
    load_annotations, load_class_scores, load_features, parse_annotations, parse_features,
    save_annotations, save_class_scores, save_features, ClassScores,
};
pub(crate) use io::write as write_text;
pub use labels::{label_boundaries, label_confidence_map, BoundaryLabels, LabelConfidenceMap};
pub use synth::{generate_synthetic_dataset, SyntheticConfig, SyntheticDataset};
pub use windows::{build_windows, candidate_window_starts, rescale_to_window, ObservationWindow, WindowConfig};

/// One annotated action instance. Units are seconds in annotation files and
/// snippets once attached to an [`ObservationWindow`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthInstance {
    pub t_start: f64,
    pub t_end: f64,
    pub label: String,
}

impl GroundTruthInstance {
    pub fn new(t_start: f64, t_end: f64, label: impl Into<String>) -> Result<Self> {
        let gt = Self {
            t_start,
            t_end,
            label: label.into(),
        };
        gt.validate()?;
        Ok(gt)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_start.is_finite() && self.t_end.is_finite()) {
            return Err(Error::validation("instance bounds must be finite"));
        }
        if self.t_start < 0.0 || self.t_end <= self.t_start {
            return Err(Error::validation(format!(
                "instance '{}' needs 0 <= start < end, got [{}, {}]",
                self.label, self.t_start, self.t_end
            )));
        }
        Ok(())
    }

    pub fn segment(&self) -> Segment {
        Segment::new(self.t_start, self.t_end)
    }

    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }
}

/// Snippet-level features of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub video_id: String,
    /// Video length in seconds (`frames / fps`).
    pub duration: f64,
    /// Frames between consecutive snippets.
    pub stride_frames: usize,
    pub fps: f64,
    /// `l_s × C`, one row per snippet.
    pub features: Matrix2D,
}

impl FeatureSequence {
    pub fn new(
        video_id: impl Into<String>,
        stride_frames: usize,
        fps: f64,
        features: Matrix2D,
    ) -> Result<Self> {
        let video_id = video_id.into();
        if features.rows() == 0 {
            return Err(Error::validation(format!("video {video_id}: empty feature sequence")));
        }
        if stride_frames == 0 || fps <= 0.0 || !fps.is_finite() {
            return Err(Error::validation(format!(
                "video {video_id}: stride_frames and fps must be positive"
            )));
        }
        let duration = (features.rows() * stride_frames) as f64 / fps;
        Ok(Self {
            video_id,
            duration,
            stride_frames,
            fps,
            features,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn channels(&self) -> usize {
        self.features.cols()
    }

    /// Converts seconds into (fractional) snippet coordinates.
    pub fn seconds_to_snippets(&self, t: f64) -> f64 {
        t / self.duration * self.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Training,
    Validation,
    Testing,
}

impl std::str::FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "training" => Ok(Subset::Training),
            "validation" => Ok(Subset::Validation),
            "testing" => Ok(Subset::Testing),
            other => Err(Error::config(format!("unknown subset '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoAnnotation {
    pub duration_second: f64,
    pub subset: Subset,
    pub annotations: Vec<GroundTruthInstance>,
}

/// Annotation database keyed by video id, iterated in id order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnnotationDb {
    pub videos: BTreeMap<String, VideoAnnotation>,
}

impl AnnotationDb {
    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn subset(&self, subset: Subset) -> impl Iterator<Item = (&String, &VideoAnnotation)> {
        self.videos.iter().filter(move |(_, v)| v.subset == subset)
    }

    /// Ground truth of the chosen subset, as the evaluator consumes it.
    pub fn ground_truth(&self, subset: Option<Subset>) -> BTreeMap<String, Vec<GroundTruthInstance>> {
        self.videos
            .iter()
            .filter(|(_, v)| subset.is_none_or(|s| v.subset == s))
            .map(|(k, v)| (k.clone(), v.annotations.clone()))
            .collect()
    }

    /// Every class label that appears in the database, sorted.
    pub fn labels(&self) -> Vec<String> {
        let mut labels: Vec<String> = self
            .videos
            .values()
            .flat_map(|v| v.annotations.iter().map(|a| a.label.clone()))
            .collect();
        labels.sort();
        labels.dedup();
        labels
    }
}
