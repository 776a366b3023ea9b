use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AnnotationDb, FeatureSequence, GroundTruthInstance, Subset, VideoAnnotation};
use crate::error::{Error, Result};
use crate::kernels::Matrix2D;

/// Video-level class probabilities: `video_id → class → probability`.
pub type ClassScores = BTreeMap<String, BTreeMap<String, f64>>;

#[derive(Serialize, Deserialize)]
struct RawDb {
    database: BTreeMap<String, RawVideo>,
}

#[derive(Serialize, Deserialize)]
struct RawVideo {
    duration_second: f64,
    subset: Subset,
    annotations: Vec<RawAnnotation>,
}

#[derive(Serialize, Deserialize)]
struct RawAnnotation {
    segment: [f64; 2],
    label: String,
}

#[derive(Serialize, Deserialize)]
struct RawFeatures {
    video_id: String,
    stride_frames: usize,
    fps: f64,
    features: Vec<Vec<f64>>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Parses an annotation file in the ActivityNet `database` layout.
pub fn parse_annotations(text: &str, origin: &Path) -> Result<AnnotationDb> {
    let raw: RawDb = serde_json::from_str(text).map_err(|e| Error::parse(origin, e.to_string()))?;
    let mut db = AnnotationDb::default();
    for (video_id, v) in raw.database {
        if !(v.duration_second.is_finite() && v.duration_second > 0.0) {
            return Err(Error::validation(format!(
                "{}: video {video_id}: duration_second must be positive",
                origin.display()
            )));
        }
        let mut annotations = Vec::with_capacity(v.annotations.len());
        for (idx, a) in v.annotations.into_iter().enumerate() {
            let gt = GroundTruthInstance {
                t_start: a.segment[0],
                t_end: a.segment[1],
                label: a.label,
            };
            gt.validate().map_err(|e| {
                Error::validation(format!(
                    "{}: video {video_id}: annotations[{idx}].segment: {e}",
                    origin.display()
                ))
            })?;
            annotations.push(gt);
        }
        db.videos.insert(
            video_id,
            VideoAnnotation {
                duration_second: v.duration_second,
                subset: v.subset,
                annotations,
            },
        );
    }
    Ok(db)
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<AnnotationDb> {
    let path = path.as_ref();
    parse_annotations(&read(path)?, path)
}

pub fn save_annotations(path: impl AsRef<Path>, db: &AnnotationDb) -> Result<()> {
    let raw = RawDb {
        database: db
            .videos
            .iter()
            .map(|(k, v)| {
                (
                    k.clone(),
                    RawVideo {
                        duration_second: v.duration_second,
                        subset: v.subset,
                        annotations: v
                            .annotations
                            .iter()
                            .map(|a| RawAnnotation {
                                segment: [a.t_start, a.t_end],
                                label: a.label.clone(),
                            })
                            .collect(),
                    },
                )
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&raw).expect("annotation serialisation");
    write(path.as_ref(), &text)
}

pub fn parse_features(text: &str, origin: &Path) -> Result<FeatureSequence> {
    let raw: RawFeatures =
        serde_json::from_str(text).map_err(|e| Error::parse(origin, e.to_string()))?;
    let matrix = Matrix2D::from_rows(&raw.features)
        .map_err(|e| Error::parse(origin, format!("field `features`: {e}")))?;
    FeatureSequence::new(raw.video_id, raw.stride_frames, raw.fps, matrix)
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    let path = path.as_ref();
    parse_features(&read(path)?, path)
}

/// Writes features as JSON; reals use shortest round-trip formatting.
pub fn save_features(path: impl AsRef<Path>, fs_: &FeatureSequence) -> Result<()> {
    let raw = RawFeatures {
        video_id: fs_.video_id.clone(),
        stride_frames: fs_.stride_frames,
        fps: fs_.fps,
        features: (0..fs_.len()).map(|r| fs_.features.row(r).to_vec()).collect(),
    };
    let text = serde_json::to_string(&raw).expect("feature serialisation");
    write(path.as_ref(), &text)
}

pub fn load_class_scores(path: impl AsRef<Path>) -> Result<ClassScores> {
    let path = path.as_ref();
    let scores: ClassScores =
        serde_json::from_str(&read(path)?).map_err(|e| Error::parse(path, e.to_string()))?;
    for (vid, classes) in &scores {
        if let Some((c, p)) = classes.iter().find(|(_, p)| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::validation(format!(
                "{}: video {vid}: class '{c}' has invalid probability {p}",
                path.display()
            )));
        }
    }
    Ok(scores)
}

pub fn save_class_scores(path: impl AsRef<Path>, scores: &ClassScores) -> Result<()> {
    let text = serde_json::to_string_pretty(scores).expect("class score serialisation");
    write(path.as_ref(), &text)
}
