//! Subcommand implementations. Each is a pure function of the configuration
//! and its input files.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use tapgen_core::boundary::{build_boundary_map, BoundaryMap, HeatmapDump};
use tapgen_core::data::{
    build_windows, candidate_window_starts, generate_synthetic_dataset, load_annotations, load_class_scores,
    load_features, rescale_to_window, save_annotations, save_class_scores, save_features, AnnotationDb,
    ClassScores, FeatureSequence, GroundTruthInstance, ObservationWindow, Subset, WindowConfig,
};
use tapgen_core::evaluation::{default_thresholds, evaluate, save_report, EvalResult, VideoDetections};
use tapgen_core::model::ProposalModel;
use tapgen_core::postprocess::{
    assign_classes, concat_ensemble, ensemble_maps, fuse_scores, greedy_nms, load_detections, multiscale_route,
    rank_candidates, save_detections, soft_nms, Detection, DetectionFile, ProposalCandidate, Selection, TimeAxis,
};
use tapgen_core::relation::{ConfidenceMapDump, ConfidenceMaps};
use tapgen_core::training::{fit_toy, write_loss_trace, LossReport, TrainingExample};
use tapgen_core::{Error, Matrix2D, Result};

use crate::config::{EnsembleMode, PipelineConfig, Suppression, WindowMode};

/// File layout of a dataset directory.
#[derive(Debug, Clone)]
pub struct DatasetLayout {
    pub root: PathBuf,
}

impl DatasetLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn annotations(&self) -> PathBuf {
        self.root.join("annotations.json")
    }

    pub fn class_scores(&self) -> PathBuf {
        self.root.join("class_scores.json")
    }

    pub fn features(&self, video_id: &str) -> PathBuf {
        self.root.join("features").join(format!("{video_id}.json"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSummary {
    pub videos: usize,
    pub instances: usize,
    pub root: PathBuf,
}

pub fn cmd_synth(cfg: &PipelineConfig) -> Result<SynthSummary> {
    let data = generate_synthetic_dataset(&cfg.synthetic_config())?;
    let layout = DatasetLayout::new(&cfg.paths.data_dir);
    for fs in &data.features {
        save_features(layout.features(&fs.video_id), fs)?;
    }
    save_annotations(layout.annotations(), &data.annotations)?;
    save_class_scores(layout.class_scores(), &data.class_scores)?;
    Ok(SynthSummary {
        videos: data.features.len(),
        instances: data.annotations.ground_truth(None).values().map(Vec::len).sum(),
        root: layout.root,
    })
}

fn load_subset(layout: &DatasetLayout, subset: Subset) -> Result<(AnnotationDb, Vec<FeatureSequence>)> {
    let db = load_annotations(layout.annotations())?;
    let features = db
        .subset(subset)
        .map(|(id, _)| load_features(layout.features(id)))
        .collect::<Result<Vec<_>>>()?;
    if features.is_empty() {
        return Err(Error::validation(format!("dataset has no {subset:?} videos")));
    }
    Ok((db, features))
}

fn training_windows(cfg: &PipelineConfig, fs: &FeatureSequence, gts: &[GroundTruthInstance]) -> Result<Vec<ObservationWindow>> {
    match cfg.window_mode {
        WindowMode::Rescale => Ok(vec![rescale_to_window(fs, gts, cfg.window_length)?]),
        WindowMode::Sliding => build_windows(
            fs,
            gts,
            &WindowConfig {
                length: cfg.window_length,
                overlap: cfg.window_overlap,
                min_inside_fraction: 0.5,
            },
        ),
    }
}

/// Every window of a video at inference time, without ground-truth filtering.
fn inference_windows(cfg: &PipelineConfig, fs: &FeatureSequence) -> Result<Vec<ObservationWindow>> {
    let l_w = cfg.window_length;
    if cfg.window_mode == WindowMode::Rescale || fs.len() < l_w {
        return Ok(vec![rescale_to_window(fs, &[], l_w)?]);
    }
    let seconds_per_snippet = fs.duration / fs.len() as f64;
    candidate_window_starts(fs.len(), l_w, cfg.window_overlap)?
        .into_iter()
        .map(|start| {
            let rows: Vec<&[f64]> = (start..start + l_w).map(|r| fs.features.row(r)).collect();
            Ok(ObservationWindow {
                video_id: fs.video_id.clone(),
                window_start: start,
                origin_seconds: start as f64 * seconds_per_snippet,
                seconds_per_cell: seconds_per_snippet,
                features: Matrix2D::from_rows(&rows)?,
                gts: Vec::new(),
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub windows: usize,
    pub parameters: usize,
    pub initial: LossReport,
    pub last: LossReport,
    pub model_path: PathBuf,
    pub trace_path: PathBuf,
}

pub fn cmd_train(cfg: &PipelineConfig) -> Result<TrainSummary> {
    use tapgen_core::kernels::Parameterized;
    let layout = DatasetLayout::new(&cfg.paths.data_dir);
    let (db, features) = load_subset(&layout, Subset::Training)?;
    let gts = db.ground_truth(Some(Subset::Training));
    let mut examples = Vec::new();
    for fs in &features {
        let instances = gts.get(&fs.video_id).map(Vec::as_slice).unwrap_or(&[]);
        for w in training_windows(cfg, fs, instances)? {
            examples.push(TrainingExample::from_window(&w, cfg.max_duration())?);
        }
    }
    let input_dim = features[0].channels();
    let model = ProposalModel::new(&cfg.model_config(input_dim), cfg.seed)?;
    let parameters = model.param_count();
    let outcome = fit_toy(model, &examples, &cfg.fit_config())?;
    save_model(&cfg.paths.model, &outcome.model)?;
    write_loss_trace(&cfg.paths.trace, &outcome.trace)?;
    Ok(TrainSummary {
        windows: examples.len(),
        parameters,
        initial: outcome.trace[0],
        last: *outcome.trace.last().expect("trace has steps + 1 entries"),
        model_path: cfg.paths.model.clone(),
        trace_path: cfg.paths.trace.clone(),
    })
}

pub fn save_model(path: &Path, model: &ProposalModel) -> Result<()> {
    let text = serde_json::to_string(model).expect("model serialises");
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ProposalModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string(value).expect("dump serialises");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Boundary and confidence maps of one window, weighted across models.
fn window_maps(
    models: &[(ProposalModel, f64)],
    window: &ObservationWindow,
    dump_dir: Option<&Path>,
) -> Result<(BoundaryMap, ConfidenceMaps)> {
    let mut entries = Vec::with_capacity(models.len());
    for (k, (model, weight)) in models.iter().enumerate() {
        let (bi, maps) = model.infer(&window.features)?;
        if let Some(dir) = dump_dir {
            let stem = format!("{}_{}_{k}", window.video_id, window.window_start);
            let heat = HeatmapDump {
                video_id: window.video_id.clone(),
                window_start: window.window_start,
                start: bi.fused.start.clone(),
                end: bi.fused.end.clone(),
            };
            write_json(&dir.join(format!("{stem}_heatmaps.json")), &heat)?;
            write_json(&dir.join(format!("{stem}_maps.json")), &ConfidenceMapDump::new(&window.video_id, &maps))?;
        }
        entries.push((build_boundary_map(&bi.fused, model.max_duration)?, maps, *weight));
    }
    if entries.len() == 1 {
        let (b, c, _) = entries.pop().expect("one entry");
        return Ok((b, c));
    }
    ensemble_maps(&entries)
}

fn video_detections(
    cfg: &PipelineConfig,
    models: &[(ProposalModel, f64)],
    fs: &FeatureSequence,
    class_scores: &ClassScores,
) -> Result<Vec<Detection>> {
    let mut candidates: Vec<ProposalCandidate> = Vec::new();
    for window in inference_windows(cfg, fs)? {
        let (mb, maps) = window_maps(models, &window, cfg.paths.dump_dir.as_deref())?;
        let axis = TimeAxis {
            origin_seconds: window.origin_seconds,
            seconds_per_cell: window.seconds_per_cell,
        };
        candidates.extend(fuse_scores(&mb, &maps, axis, Selection::default())?);
    }
    rank_candidates(&mut candidates);
    candidates.truncate(cfg.postprocess.top_k);
    let kept = match cfg.postprocess.suppression {
        Suppression::Soft => soft_nms(&candidates, &cfg.soft_nms_config()),
        Suppression::Greedy => greedy_nms(&candidates, cfg.postprocess.greedy_threshold),
    };
    let scores = class_scores
        .get(&fs.video_id)
        .ok_or_else(|| Error::validation(format!("no class scores for video {}", fs.video_id)))?;
    assign_classes(&kept, scores, cfg.postprocess.class_top_k)
}

fn thread_pool(cfg: &PipelineConfig) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))
}

/// Detections for every video of the inference subset from a weighted set of models.
fn infer_with_models(cfg: &PipelineConfig, models: &[(ProposalModel, f64)]) -> Result<DetectionFile> {
    let layout = DatasetLayout::new(&cfg.paths.data_dir);
    let (_, features) = load_subset(&layout, cfg.infer_subset)?;
    let class_scores = load_class_scores(layout.class_scores())?;
    let dims: BTreeSet<usize> = models.iter().map(|(m, _)| m.cbg.config.input_dim).collect();
    if dims.len() != 1 || !dims.contains(&features[0].channels()) {
        return Err(Error::config(format!(
            "model input widths {dims:?} do not match {}-channel features",
            features[0].channels()
        )));
    }
    let pool = thread_pool(cfg)?;
    let per_video: Vec<Vec<Detection>> = pool.install(|| {
        features
            .par_iter()
            .map(|fs| video_detections(cfg, models, fs, &class_scores))
            .collect::<Result<Vec<_>>>()
    })?;
    let results = features
        .iter()
        .map(|fs| fs.video_id.clone())
        .zip(per_video)
        .collect();
    Ok(DetectionFile::new(results))
}

pub fn cmd_infer(cfg: &PipelineConfig) -> Result<DetectionFile> {
    let model = load_model(&cfg.paths.model)?;
    let file = infer_with_models(cfg, &[(model, 1.0)])?;
    save_detections(&cfg.paths.detections, &file)?;
    Ok(file)
}

/// Combines several inputs into one detection file. Inputs are detection
/// files for the concat and multiscale modes and model files for the maps mode.
pub fn cmd_ensemble(cfg: &PipelineConfig, inputs: &[PathBuf]) -> Result<DetectionFile> {
    if inputs.is_empty() {
        return Err(Error::config("ensemble needs at least one input"));
    }
    let file = match cfg.ensemble.mode {
        EnsembleMode::Concat => {
            let files = inputs.iter().map(load_detections).collect::<Result<Vec<_>>>()?;
            let videos: BTreeSet<&String> = files.iter().flat_map(|f| f.results.keys()).collect();
            let results = videos
                .into_iter()
                .map(|v| {
                    let sets: Vec<Vec<Detection>> = files.iter().filter_map(|f| f.results.get(v).cloned()).collect();
                    (v.clone(), concat_ensemble(&sets, cfg.postprocess.sigma_nms))
                })
                .collect();
            DetectionFile::new(results)
        }
        EnsembleMode::Multiscale => {
            if inputs.len() != cfg.ensemble.scales.len() {
                return Err(Error::config(format!(
                    "{} inputs for {} scales",
                    inputs.len(),
                    cfg.ensemble.scales.len()
                )));
            }
            let files = inputs.iter().map(load_detections).collect::<Result<Vec<_>>>()?;
            let db = load_annotations(DatasetLayout::new(&cfg.paths.data_dir).annotations())?;
            let videos: BTreeSet<&String> = files.iter().flat_map(|f| f.results.keys()).collect();
            let mut results = BTreeMap::new();
            for v in videos {
                let duration = db
                    .videos
                    .get(v)
                    .ok_or_else(|| Error::validation(format!("video {v} is not in the annotations")))?
                    .duration_second;
                let by_scale: BTreeMap<usize, Vec<Detection>> = cfg
                    .ensemble
                    .scales
                    .iter()
                    .zip(&files)
                    .map(|(&s, f)| (s, f.results.get(v).cloned().unwrap_or_default()))
                    .collect();
                results.insert(v.clone(), multiscale_route(duration, &by_scale)?);
            }
            DetectionFile::new(results)
        }
        EnsembleMode::Maps => {
            let weights = if cfg.ensemble.weights.is_empty() {
                vec![1.0; inputs.len()]
            } else {
                cfg.ensemble.weights.clone()
            };
            if weights.len() != inputs.len() {
                return Err(Error::config(format!(
                    "{} weights for {} models",
                    weights.len(),
                    inputs.len()
                )));
            }
            let models = inputs
                .iter()
                .zip(weights)
                .map(|(p, w)| Ok((load_model(p)?, w)))
                .collect::<Result<Vec<_>>>()?;
            infer_with_models(cfg, &models)?
        }
    };
    save_detections(&cfg.paths.detections, &file)?;
    Ok(file)
}

pub fn cmd_eval(cfg: &PipelineConfig) -> Result<EvalResult> {
    let layout = DatasetLayout::new(&cfg.paths.data_dir);
    let db = load_annotations(layout.annotations())?;
    let gts = db.ground_truth(Some(cfg.infer_subset));
    let file = load_detections(&cfg.paths.detections)?;
    let dets: VideoDetections = file.results.into_iter().filter(|(v, _)| gts.contains_key(v)).collect();
    let result = evaluate(&dets, &gts, &default_thresholds())?;
    save_report(&cfg.paths.report, &result)?;
    Ok(result)
}
