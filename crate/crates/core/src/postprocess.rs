//! From score maps to ranked, suppressed and classified detections.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::boundary::BoundaryMap;
use crate::data::ClassScores;
use crate::error::{Error, Result};
use crate::kernels::Matrix2D;
use crate::relation::ConfidenceMaps;
use crate::segment::{tiou, Segment};

/// Gaussian Soft-NMS width.
pub const DEFAULT_SIGMA_NMS: f64 = 0.75;
pub const DEFAULT_TOP_K: usize = 100;
/// Window scales used by [`multiscale_route`].
pub const MULTISCALE_SCALES: [usize; 3] = [30, 80, 100];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalCandidate {
    pub t_start: f64,
    pub t_end: f64,
    pub boundary_score: f64,
    pub cc_score: f64,
    pub cr_score: f64,
    pub fused_score: f64,
    /// Score after suppression; equals `fused_score` until suppression runs.
    pub decayed_score: f64,
}

impl ProposalCandidate {
    pub fn segment(&self) -> Segment {
        Segment::new(self.t_start, self.t_end)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub segment: [f64; 2],
    pub label: String,
    pub score: f64,
}

impl Detection {
    pub fn as_segment(&self) -> Segment {
        Segment::new(self.segment[0], self.segment[1])
    }
}

/// Mapping from grid cells to seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeAxis {
    pub origin_seconds: f64,
    pub seconds_per_cell: f64,
}

impl TimeAxis {
    pub fn to_seconds(&self, cell: usize) -> f64 {
        self.origin_seconds + cell as f64 * self.seconds_per_cell
    }
}

/// Which fused candidates survive extraction.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Selection {
    pub top_k: Option<usize>,
    /// Minimum fused score.
    pub threshold: Option<f64>,
}

impl Selection {
    pub fn top_k(k: usize) -> Self {
        Self {
            top_k: Some(k),
            threshold: None,
        }
    }
}

/// Scores every valid proposal by `mb · sqrt(cc · cr)` and returns the
/// selected candidates by descending score (ties in grid order).
///
/// Zero-length cells (`j = 0`) are not proposals and are skipped.
pub fn fuse_scores(
    mb: &BoundaryMap,
    maps: &ConfidenceMaps,
    axis: TimeAxis,
    selection: Selection,
) -> Result<Vec<ProposalCandidate>> {
    if mb.grid != maps.grid {
        return Err(Error::input(format!(
            "boundary map is {}x{}, confidence maps are {}x{}",
            mb.grid.max_duration, mb.grid.length, maps.grid.max_duration, maps.grid.length
        )));
    }
    let mut out: Vec<ProposalCandidate> = mb
        .grid
        .cells()
        .filter(|&(j, _)| j > 0)
        .map(|(j, i)| {
            let b = mb.values.get(j, i);
            let cc = maps.cc.get(j, i);
            let cr = maps.cr.get(j, i);
            let fused = b * (cc * cr).sqrt();
            ProposalCandidate {
                t_start: axis.to_seconds(i),
                t_end: axis.to_seconds(i + j),
                boundary_score: b,
                cc_score: cc,
                cr_score: cr,
                fused_score: fused,
                decayed_score: fused,
            }
        })
        .filter(|c| selection.threshold.is_none_or(|t| c.fused_score >= t))
        .collect();
    out.sort_by(|a, b| b.fused_score.total_cmp(&a.fused_score));
    if let Some(k) = selection.top_k {
        out.truncate(k);
    }
    Ok(out)
}

/// Sorts by descending score keeping input order among ties.
pub fn rank_candidates(props: &mut [ProposalCandidate]) {
    props.sort_by(|a, b| b.decayed_score.total_cmp(&a.decayed_score));
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftNmsConfig {
    pub sigma: f64,
    /// Selection stops once the best remaining score falls below this.
    pub keep_threshold: f64,
    pub max_keep: Option<usize>,
}

impl Default for SoftNmsConfig {
    fn default() -> Self {
        Self {
            sigma: DEFAULT_SIGMA_NMS,
            keep_threshold: 0.0,
            max_keep: None,
        }
    }
}

/// Gaussian Soft-NMS over parallel segment/score slices. Returns
/// `(index, decayed score)` in selection order.
pub fn soft_nms_indices(segments: &[Segment], scores: &[f64], cfg: &SoftNmsConfig) -> Vec<(usize, f64)> {
    let mut current = scores.to_vec();
    let mut alive: Vec<usize> = (0..segments.len()).collect();
    let limit = cfg.max_keep.unwrap_or(usize::MAX);
    let mut kept = Vec::new();
    while !alive.is_empty() && kept.len() < limit {
        let (pos, &best) = alive
            .iter()
            .enumerate()
            .reduce(|a, b| if current[*b.1] > current[*a.1] { b } else { a })
            .expect("alive is non-empty");
        if current[best] < cfg.keep_threshold {
            break;
        }
        alive.remove(pos);
        kept.push((best, current[best]));
        for &k in &alive {
            let iou = tiou(&segments[best], &segments[k]);
            current[k] *= (-(iou * iou) / cfg.sigma).exp();
        }
    }
    kept
}

pub fn soft_nms(props: &[ProposalCandidate], cfg: &SoftNmsConfig) -> Vec<ProposalCandidate> {
    let segments: Vec<Segment> = props.iter().map(|p| p.segment()).collect();
    let scores: Vec<f64> = props.iter().map(|p| p.decayed_score).collect();
    soft_nms_indices(&segments, &scores, cfg)
        .into_iter()
        .map(|(k, s)| ProposalCandidate {
            decayed_score: s,
            ..props[k].clone()
        })
        .collect()
}

/// Hard suppression: keep the best, drop everything overlapping it by more
/// than `iou_threshold`, repeat.
pub fn greedy_nms(props: &[ProposalCandidate], iou_threshold: f64) -> Vec<ProposalCandidate> {
    let mut order: Vec<usize> = (0..props.len()).collect();
    order.sort_by(|&a, &b| props[b].decayed_score.total_cmp(&props[a].decayed_score));
    let mut kept: Vec<usize> = Vec::new();
    for k in order {
        let seg = props[k].segment();
        if kept.iter().all(|&q| tiou(&props[q].segment(), &seg) <= iou_threshold) {
            kept.push(k);
        }
    }
    kept.into_iter().map(|k| props[k].clone()).collect()
}

/// The `top_k` classes of a video by probability, ties by name.
pub fn top_classes(class_scores: &BTreeMap<String, f64>, top_k: usize) -> Result<Vec<(&str, f64)>> {
    if class_scores.is_empty() {
        return Err(Error::input("empty class score map"));
    }
    let mut ranked: Vec<(&str, f64)> = class_scores.iter().map(|(k, &v)| (k.as_str(), v)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    ranked.truncate(top_k);
    Ok(ranked)
}

/// One detection per proposal and top class, scored `p′ · probability`.
pub fn assign_classes(
    props: &[ProposalCandidate],
    class_scores: &BTreeMap<String, f64>,
    top_k: usize,
) -> Result<Vec<Detection>> {
    let classes = top_classes(class_scores, top_k)?;
    Ok(props
        .iter()
        .flat_map(|p| {
            classes.iter().map(move |&(label, prob)| Detection {
                segment: [p.t_start, p.t_end],
                label: label.to_string(),
                score: p.decayed_score * prob,
            })
        })
        .collect())
}

fn weighted_sum(parts: &[(&Matrix2D, f64)]) -> Matrix2D {
    let mut acc = Matrix2D::zeros(parts[0].0.rows(), parts[0].0.cols());
    for &(m, w) in parts {
        for (a, &v) in acc.values_mut().iter_mut().zip(m.values()) {
            *a += w * v;
        }
    }
    acc
}

/// Weighted elementwise combination of several models' maps; weights are
/// renormalised to sum to one.
pub fn ensemble_maps(entries: &[(BoundaryMap, ConfidenceMaps, f64)]) -> Result<(BoundaryMap, ConfidenceMaps)> {
    let Some(first) = entries.first() else {
        return Err(Error::input("no maps to ensemble"));
    };
    let grid = first.0.grid;
    if entries.iter().any(|(b, c, _)| b.grid != grid || c.grid != grid) {
        return Err(Error::input("ensemble members cover different grids"));
    }
    if entries.iter().any(|e| !(e.2 >= 0.0 && e.2.is_finite())) {
        return Err(Error::input("ensemble weights must be finite and non-negative"));
    }
    let total: f64 = entries.iter().map(|e| e.2).sum();
    if total <= 0.0 {
        return Err(Error::input("ensemble weights are all zero"));
    }
    let pick = |f: fn(&(BoundaryMap, ConfidenceMaps, f64)) -> &Matrix2D| -> Matrix2D {
        let parts: Vec<(&Matrix2D, f64)> = entries.iter().map(|e| (f(e), e.2 / total)).collect();
        weighted_sum(&parts)
    };
    Ok((
        BoundaryMap {
            grid,
            values: pick(|e| &e.0.values),
        },
        ConfidenceMaps {
            grid,
            cc: pick(|e| &e.1.cc),
            cr: pick(|e| &e.1.cr),
        },
    ))
}

/// Picks the detections of the scale suited to the video's duration:
/// under 30 s the smallest, 30–120 s inclusive the middle, above 120 s the largest.
pub fn multiscale_route(duration: f64, results_by_scale: &BTreeMap<usize, Vec<Detection>>) -> Result<Vec<Detection>> {
    let [small, mid, large] = MULTISCALE_SCALES;
    let scale = if duration < 30.0 {
        small
    } else if duration <= 120.0 {
        mid
    } else {
        large
    };
    if let Some(missing) = MULTISCALE_SCALES.iter().find(|s| !results_by_scale.contains_key(s)) {
        return Err(Error::config(format!("no results for scale {missing}")));
    }
    Ok(results_by_scale[&scale].clone())
}

/// Concatenates detection sets and runs Soft-NMS within each class.
/// Output is grouped by class name, in selection order within a class.
pub fn concat_ensemble(det_sets: &[Vec<Detection>], sigma_nms: f64) -> Vec<Detection> {
    let mut by_class: BTreeMap<&str, Vec<&Detection>> = BTreeMap::new();
    for d in det_sets.iter().flatten() {
        by_class.entry(d.label.as_str()).or_default().push(d);
    }
    let cfg = SoftNmsConfig {
        sigma: sigma_nms,
        ..SoftNmsConfig::default()
    };
    let mut out = Vec::new();
    for dets in by_class.values() {
        let segments: Vec<Segment> = dets.iter().map(|d| d.as_segment()).collect();
        let scores: Vec<f64> = dets.iter().map(|d| d.score).collect();
        for (k, s) in soft_nms_indices(&segments, &scores, &cfg) {
            out.push(Detection {
                score: s,
                ..dets[k].clone()
            });
        }
    }
    out
}

/// Submission-style detection file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionFile {
    pub version: String,
    pub results: BTreeMap<String, Vec<Detection>>,
    #[serde(default = "empty_object")]
    pub external_data: serde_json::Value,
}

fn empty_object() -> serde_json::Value {
    serde_json::Value::Object(serde_json::Map::new())
}

impl DetectionFile {
    pub fn new(results: BTreeMap<String, Vec<Detection>>) -> Self {
        Self {
            version: "VERSION 1.3".to_string(),
            results,
            external_data: empty_object(),
        }
    }
}

pub fn load_detections(path: impl AsRef<Path>) -> Result<DetectionFile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: DetectionFile = serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
    for (video, dets) in &file.results {
        if let Some(d) = dets.iter().find(|d| !(d.segment[0] <= d.segment[1]) || !d.score.is_finite()) {
            return Err(Error::validation(format!(
                "video {video}: detection {:?} has an inverted segment or a non-finite score",
                d.segment
            )));
        }
    }
    Ok(file)
}

pub fn save_detections(path: impl AsRef<Path>, file: &DetectionFile) -> Result<()> {
    let text = serde_json::to_string_pretty(file).expect("detections serialise");
    crate::data::write_text(path.as_ref(), &text)
}

/// Class probabilities of one video.
pub fn class_scores_for<'a>(scores: &'a ClassScores, video: &str) -> Result<&'a BTreeMap<String, f64>> {
    scores
        .get(video)
        .ok_or_else(|| Error::input(format!("no class scores for video {video}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ProposalGrid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cand(s: f64, e: f64, score: f64) -> ProposalCandidate {
        ProposalCandidate {
            t_start: s,
            t_end: e,
            boundary_score: score,
            cc_score: 1.0,
            cr_score: 1.0,
            fused_score: score,
            decayed_score: score,
        }
    }

    fn unit_axis() -> TimeAxis {
        TimeAxis {
            origin_seconds: 0.0,
            seconds_per_cell: 1.0,
        }
    }

    fn toy_maps(n: usize, seed: u64) -> (BoundaryMap, ConfidenceMaps) {
        let grid = ProposalGrid::new(n, n).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = grid.zeros();
        let mut cc = grid.zeros();
        let mut cr = grid.zeros();
        for (j, i) in grid.cells() {
            b.set(j, i, rng.random());
            cc.set(j, i, rng.random());
            cr.set(j, i, rng.random());
        }
        (BoundaryMap { grid, values: b }, ConfidenceMaps { grid, cc, cr })
    }

    #[test]
    fn fusion_arithmetic() {
        let grid = ProposalGrid::new(2, 2).unwrap();
        let mut mb = BoundaryMap {
            grid,
            values: grid.zeros(),
        };
        let mut maps = ConfidenceMaps {
            grid,
            cc: grid.zeros(),
            cr: grid.zeros(),
        };
        mb.values.set(1, 0, 0.5);
        maps.cc.set(1, 0, 0.64);
        maps.cr.set(1, 0, 0.36);
        let out = fuse_scores(&mb, &maps, unit_axis(), Selection::default()).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out[0].fused_score - 0.24).abs() < 1e-15);
        assert_eq!((out[0].t_start, out[0].t_end), (0.0, 1.0));

        mb.values.set(1, 0, 0.0);
        let out = fuse_scores(&mb, &maps, unit_axis(), Selection::default()).unwrap();
        assert_eq!(out[0].fused_score, 0.0);

        let other = ConfidenceMaps {
            grid: ProposalGrid::new(2, 3).unwrap(),
            cc: Matrix2D::zeros(2, 3),
            cr: Matrix2D::zeros(2, 3),
        };
        assert!(fuse_scores(&mb, &other, unit_axis(), Selection::default()).is_err());
    }

    #[test]
    fn fusion_ranking_matches_exhaustive_sort() {
        let (mb, maps) = toy_maps(3, 4);
        let axis = TimeAxis {
            origin_seconds: 2.0,
            seconds_per_cell: 0.5,
        };
        let out = fuse_scores(&mb, &maps, axis, Selection::top_k(2)).unwrap();
        let mut all = Vec::new();
        for j in 1..3 {
            for i in 0..3 - j {
                let s = mb.values.get(j, i) * (maps.cc.get(j, i) * maps.cr.get(j, i)).sqrt();
                all.push((s, 2.0 + 0.5 * i as f64, 2.0 + 0.5 * (i + j) as f64));
            }
        }
        all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        assert_eq!(out.len(), 2);
        for (c, (s, ts, te)) in out.iter().zip(&all) {
            assert_eq!((c.fused_score, c.t_start, c.t_end), (*s, *ts, *te));
        }
        let thresholded = fuse_scores(&mb, &maps, axis, Selection { top_k: None, threshold: Some(all[1].0) }).unwrap();
        assert_eq!(thresholded.len(), 2);
    }

    #[test]
    fn soft_nms_examples() {
        let cfg = SoftNmsConfig::default();
        let single = vec![cand(0.0, 1.0, 0.4)];
        assert_eq!(soft_nms(&single, &cfg), single);

        let disjoint = vec![cand(0.0, 1.0, 0.4), cand(2.0, 3.0, 0.9)];
        let out = soft_nms(&disjoint, &cfg);
        assert_eq!(out[0].decayed_score, 0.9);
        assert_eq!(out[1].decayed_score, 0.4);

        let dup = vec![cand(0.0, 1.0, 0.9), cand(0.0, 1.0, 0.8)];
        let out = soft_nms(&dup, &cfg);
        assert!((out[1].decayed_score - 0.8 * (-1.0f64 / 0.75).exp()).abs() < 1e-15);
        assert!((out[1].decayed_score - 0.210878).abs() < 1e-6);

        let capped = SoftNmsConfig {
            max_keep: Some(1),
            ..cfg
        };
        assert_eq!(soft_nms(&dup, &capped).len(), 1);
        let floor = SoftNmsConfig {
            keep_threshold: 0.5,
            ..cfg
        };
        assert_eq!(soft_nms(&dup, &floor).len(), 1);
    }

    #[test]
    fn greedy_nms_examples() {
        let disjoint = vec![cand(0.0, 1.0, 0.4), cand(2.0, 3.0, 0.9)];
        assert_eq!(greedy_nms(&disjoint, 0.5).len(), 2);
        let dups = vec![cand(1.0, 2.0, 0.3), cand(1.0, 2.0, 0.7), cand(1.0, 2.0, 0.5)];
        let out = greedy_nms(&dups, 0.5);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].decayed_score, 0.7);
    }

    #[test]
    fn class_assignment() {
        let props = vec![cand(0.0, 1.0, 0.5), cand(1.0, 3.0, 0.2)];
        let scores: BTreeMap<String, f64> = [("a", 0.6), ("b", 0.3), ("c", 0.1)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let dets = assign_classes(&props, &scores, 2).unwrap();
        assert_eq!(dets.len(), 4);
        assert_eq!((dets[0].label.as_str(), dets[0].score), ("a", 0.5 * 0.6));
        assert_eq!((dets[1].label.as_str(), dets[1].score), ("b", 0.5 * 0.3));
        assert!((dets[0].score - 0.30).abs() < 1e-15 && (dets[1].score - 0.15).abs() < 1e-15);

        let sure: BTreeMap<String, f64> = [("a".to_string(), 1.0)].into_iter().collect();
        let dets = assign_classes(&props, &sure, 2).unwrap();
        assert_eq!(dets.len(), 2);
        assert_eq!(dets[1].score, 0.2);
        assert!(assign_classes(&props, &BTreeMap::new(), 2).is_err());
    }

    #[test]
    fn map_ensembles() {
        let (b1, c1) = toy_maps(2, 1);
        let (b2, c2) = toy_maps(2, 2);
        let (b, c) = ensemble_maps(&[(b1.clone(), c1.clone(), 1.0), (b1.clone(), c1.clone(), 1.0)]).unwrap();
        assert_eq!((b.values, c.cc), (b1.values.clone(), c1.cc.clone()));
        let (b, c) = ensemble_maps(&[(b1.clone(), c1.clone(), 2.0), (b2.clone(), c2.clone(), 0.0)]).unwrap();
        assert_eq!((b.values, c.cr), (b1.values.clone(), c1.cr.clone()));
        let (b, c) = ensemble_maps(&[(b1.clone(), c1.clone(), 3.0), (b2.clone(), c2.clone(), 7.0)]).unwrap();
        for k in 0..4 {
            let want = 0.3 * b1.values.values()[k] + 0.7 * b2.values.values()[k];
            assert!((b.values.values()[k] - want).abs() < 1e-15);
            let want = 0.3 * c1.cc.values()[k] + 0.7 * c2.cc.values()[k];
            assert!((c.cc.values()[k] - want).abs() < 1e-15);
        }
        assert!(ensemble_maps(&[(b1.clone(), c1.clone(), 0.0)]).is_err());
        let (b3, c3) = toy_maps(3, 3);
        assert!(ensemble_maps(&[(b1, c1, 1.0), (b3, c3, 1.0)]).is_err());
    }

    fn det(s: f64, e: f64, label: &str, score: f64) -> Detection {
        Detection {
            segment: [s, e],
            label: label.into(),
            score,
        }
    }

    #[test]
    fn routing_by_duration() {
        let results: BTreeMap<usize, Vec<Detection>> = MULTISCALE_SCALES
            .iter()
            .map(|&s| (s, vec![det(0.0, 1.0, "a", s as f64)]))
            .collect();
        let scale = |d: f64| multiscale_route(d, &results).unwrap()[0].score;
        assert_eq!(scale(25.0), 30.0);
        assert_eq!(scale(30.0), 80.0);
        assert_eq!(scale(60.0), 80.0);
        assert_eq!(scale(120.0), 80.0);
        assert_eq!(scale(150.0), 100.0);
        let mut partial = results.clone();
        partial.remove(&80);
        assert!(multiscale_route(60.0, &partial).is_err());
    }

    #[test]
    fn concatenation_ensemble() {
        let set = vec![det(0.0, 2.0, "a", 0.9), det(5.0, 6.0, "a", 0.4)];
        assert_eq!(concat_ensemble(std::slice::from_ref(&set), 0.75), set);

        let doubled = concat_ensemble(&[set.clone(), set.clone()], 0.75);
        let decay = (-1.0f64 / 0.75).exp();
        let scores: Vec<f64> = doubled.iter().map(|d| d.score).collect();
        assert_eq!(scores, vec![0.9, 0.4, 0.9 * decay, 0.4 * decay]);

        let other = vec![det(0.0, 2.0, "b", 0.3)];
        let mut union = concat_ensemble(&[set.clone(), other.clone()], 0.75);
        let mut expect = [set, other].concat();
        union.sort_by(|a, b| a.score.total_cmp(&b.score));
        expect.sort_by(|a, b| a.score.total_cmp(&b.score));
        assert_eq!(union, expect);
    }

    #[test]
    fn detection_file_round_trip() {
        let dir = std::env::temp_dir().join(format!("tapgen-dets-{}", std::process::id()));
        let path = dir.join("d.json");
        let mut results = BTreeMap::new();
        results.insert("v1".to_string(), vec![det(0.5, 2.25, "a", 0.125)]);
        let file = DetectionFile::new(results);
        save_detections(&path, &file).unwrap();
        assert_eq!(load_detections(&path).unwrap(), file);
        std::fs::write(&path, r#"{"version": "x", "results": {"v": [{"segment": [3, 1], "label": "a", "score": 1}]}}"#)
            .unwrap();
        assert!(matches!(load_detections(&path), Err(Error::Validation(_))));
        std::fs::remove_dir_all(dir).ok();
    }

    fn brute_soft_nms(segs: &[Segment], scores: &[f64], sigma: f64) -> Vec<(usize, f64)> {
        let mut s = scores.to_vec();
        let mut done = vec![false; segs.len()];
        let mut out = Vec::new();
        for _ in 0..segs.len() {
            let mut best = None;
            for k in 0..segs.len() {
                if !done[k] && best.is_none_or(|b: usize| s[k] > s[b]) {
                    best = Some(k);
                }
            }
            let b = best.unwrap();
            done[b] = true;
            out.push((b, s[b]));
            for k in 0..segs.len() {
                if !done[k] {
                    let iou = tiou(&segs[b], &segs[k]);
                    s[k] *= (-(iou * iou) / sigma).exp();
                }
            }
        }
        out
    }

    proptest::proptest! {
        #[test]
        fn soft_nms_never_raises_and_keeps_top(seed in 0u64..500, n in 1usize..9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let props: Vec<ProposalCandidate> = (0..n)
                .map(|_| {
                    let s = rng.random_range(0.0..10.0);
                    cand(s, s + rng.random_range(0.1..5.0), rng.random())
                })
                .collect();
            let out = soft_nms(&props, &SoftNmsConfig::default());
            proptest::prop_assert_eq!(out.len(), n);
            let top = props.iter().map(|p| p.decayed_score).fold(f64::MIN, f64::max);
            proptest::prop_assert_eq!(out[0].decayed_score, top);
            for o in &out {
                let orig = props.iter().find(|p| p.t_start == o.t_start && p.t_end == o.t_end).unwrap();
                proptest::prop_assert!(o.decayed_score <= orig.decayed_score);
            }
            let segs: Vec<Segment> = props.iter().map(|p| p.segment()).collect();
            let scores: Vec<f64> = props.iter().map(|p| p.decayed_score).collect();
            proptest::prop_assert_eq!(
                soft_nms_indices(&segs, &scores, &SoftNmsConfig::default()),
                brute_soft_nms(&segs, &scores, 0.75)
            );
        }
    }
}
