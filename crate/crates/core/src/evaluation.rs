//! Temporal-IoU average precision and mAP.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::GroundTruthInstance;
use crate::error::{Error, Result};
use crate::postprocess::Detection;
use crate::segment::tiou;

/// Detections per video id.
pub type VideoDetections = BTreeMap<String, Vec<Detection>>;
/// Ground truth per video id.
pub type VideoGroundTruth = BTreeMap<String, Vec<GroundTruthInstance>>;

/// `0.50, 0.55, …, 0.95`.
pub fn default_thresholds() -> Vec<f64> {
    (0..10).map(|k| (50 + 5 * k) as f64 / 100.0).collect()
}

pub fn threshold_key(t: f64) -> String {
    format!("{t:.2}")
}

/// AP of one class at one tIoU threshold, or `None` when the class has no
/// ground truth.
///
/// Detections are ranked by score (ties keep video-id then list order); each
/// is matched to the unmatched instance of its video with the highest tIoU at
/// or above `threshold`. AP is the sum of precision at every true positive
/// divided by the number of instances.
pub fn average_precision(dets: &VideoDetections, gts: &VideoGroundTruth, class: &str, threshold: f64) -> Option<f64> {
    let instances: BTreeMap<&str, Vec<&GroundTruthInstance>> = gts
        .iter()
        .map(|(v, list)| (v.as_str(), list.iter().filter(|g| g.label == class).collect::<Vec<_>>()))
        .filter(|(_, list)| !list.is_empty())
        .collect();
    let n_gt: usize = instances.values().map(Vec::len).sum();
    if n_gt == 0 {
        return None;
    }
    let mut ranked: Vec<(&str, &Detection)> = dets
        .iter()
        .flat_map(|(v, list)| list.iter().filter(|d| d.label == class).map(move |d| (v.as_str(), d)))
        .collect();
    ranked.sort_by(|a, b| b.1.score.total_cmp(&a.1.score));

    let mut matched: BTreeMap<&str, Vec<bool>> = instances.iter().map(|(v, l)| (*v, vec![false; l.len()])).collect();
    let mut tp = 0usize;
    let mut sum_precision = 0.0;
    for (rank, (video, det)) in ranked.iter().enumerate() {
        let Some(cands) = instances.get(video) else {
            continue;
        };
        let used = matched.get_mut(video).expect("same keys as instances");
        let seg = det.as_segment();
        let mut best: Option<(usize, f64)> = None;
        for (k, gt) in cands.iter().enumerate() {
            if used[k] {
                continue;
            }
            let iou = tiou(&seg, &gt.segment());
            if iou >= threshold && best.is_none_or(|(_, b)| iou > b) {
                best = Some((k, iou));
            }
        }
        if let Some((k, _)) = best {
            used[k] = true;
            tp += 1;
            sum_precision += tp as f64 / (rank + 1) as f64;
        }
    }
    Some(sum_precision / n_gt as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// Keyed by [`threshold_key`].
    pub map_by_tiou: BTreeMap<String, f64>,
    pub average_map: f64,
    pub ap_by_class: BTreeMap<String, BTreeMap<String, f64>>,
}

impl EvalResult {
    /// mAP at 0.50, 0.75 and 0.95 when those thresholds were evaluated.
    pub fn headline(&self) -> [Option<f64>; 3] {
        ["0.50", "0.75", "0.95"].map(|k| self.map_by_tiou.get(k).copied())
    }

    pub fn report(&self) -> EvalReport {
        EvalReport {
            map: self.map_by_tiou.clone(),
            average_map: self.average_map,
        }
    }

    /// Plain-text table with the 0.50 / 0.75 / 0.95 / average columns.
    pub fn table(&self) -> String {
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{:.2}", 100.0 * v));
        let [a, b, c] = self.headline();
        let mut out = String::new();
        writeln!(out, "{:<10} {:>8} {:>8} {:>8} {:>8}", "", "0.50", "0.75", "0.95", "Average").unwrap();
        writeln!(
            out,
            "{:<10} {:>8} {:>8} {:>8} {:>8}",
            "mAP (%)",
            cell(a),
            cell(b),
            cell(c),
            cell(Some(self.average_map))
        )
        .unwrap();
        out
    }
}

/// Serialised form of [`EvalResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(rename = "mAP")]
    pub map: BTreeMap<String, f64>,
    #[serde(rename = "average_mAP")]
    pub average_map: f64,
}

pub fn save_report(path: impl AsRef<Path>, result: &EvalResult) -> Result<()> {
    let text = serde_json::to_string_pretty(&result.report()).expect("report serialises");
    crate::data::write_text(path.as_ref(), &text)
}

/// mAP at each threshold over the classes present in the ground truth.
pub fn evaluate(dets: &VideoDetections, gts: &VideoGroundTruth, thresholds: &[f64]) -> Result<EvalResult> {
    let classes: std::collections::BTreeSet<&str> = gts.values().flatten().map(|g| g.label.as_str()).collect();
    if classes.is_empty() {
        return Err(Error::input("ground truth has no instances"));
    }
    if thresholds.is_empty() {
        return Err(Error::input("no tIoU thresholds"));
    }
    let mut ap_by_class: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    let mut map_by_tiou = BTreeMap::new();
    for &t in thresholds {
        let key = threshold_key(t);
        let mut sum = 0.0;
        for &class in &classes {
            let ap = average_precision(dets, gts, class, t).expect("class drawn from ground truth");
            ap_by_class.entry(class.to_string()).or_default().insert(key.clone(), ap);
            sum += ap;
        }
        map_by_tiou.insert(key, sum / classes.len() as f64);
    }
    let average_map = map_by_tiou.values().sum::<f64>() / map_by_tiou.len() as f64;
    Ok(EvalResult {
        map_by_tiou,
        average_map,
        ap_by_class,
    })
}

/// Turns ground truth into score-1 detections (a self-evaluation baseline).
pub fn ground_truth_as_detections(gts: &VideoGroundTruth) -> VideoDetections {
    gts.iter()
        .map(|(v, list)| {
            let dets = list
                .iter()
                .map(|g| Detection {
                    segment: [g.t_start, g.t_end],
                    label: g.label.clone(),
                    score: 1.0,
                })
                .collect();
            (v.clone(), dets)
        })
        .collect()
}
