use serde::{Deserialize, Serialize};

use super::{FeatureSequence, GroundTruthInstance};
use crate::error::{Error, Result};
use crate::kernels::{linear_resize, Matrix2D};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    pub length: usize,
    pub overlap: f64,
    /// Instances partly outside a window are clipped and kept only if at least
    /// this fraction of their duration lies inside.
    pub min_inside_fraction: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            length: 100,
            overlap: 0.75,
            min_inside_fraction: 0.5,
        }
    }
}

/// A fixed-length slice of a video in window-relative snippet coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationWindow {
    pub video_id: String,
    /// First source snippet covered by the window.
    pub window_start: usize,
    /// Time of window cell 0, in seconds.
    pub origin_seconds: f64,
    /// Seconds spanned by one window cell.
    pub seconds_per_cell: f64,
    /// `l_w × C`.
    pub features: Matrix2D,
    /// Instances in window cells, clipped to `[0, l_w]`.
    pub gts: Vec<GroundTruthInstance>,
}

impl ObservationWindow {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    /// Window cell coordinate to seconds.
    pub fn to_seconds(&self, cell: f64) -> f64 {
        self.origin_seconds + cell * self.seconds_per_cell
    }
}

fn check_overlap(l_w: usize, overlap: f64) -> Result<()> {
    if l_w < 2 {
        return Err(Error::config(format!("window length must be at least 2, got {l_w}")));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::config(format!("overlap must lie in [0, 1), got {overlap}")));
    }
    Ok(())
}

/// Start snippets of all sliding windows before the ground-truth retention filter.
pub fn candidate_window_starts(len: usize, l_w: usize, overlap: f64) -> Result<Vec<usize>> {
    check_overlap(l_w, overlap)?;
    if len <= l_w {
        return Ok(vec![0]);
    }
    let stride = ((l_w as f64 * (1.0 - overlap)).round() as usize).max(1);
    let mut starts: Vec<usize> = (0..).map(|k| k * stride).take_while(|s| s + l_w <= len).collect();
    let last = *starts.last().expect("len > l_w gives a first window");
    if last + l_w < len {
        starts.push(len - l_w);
    }
    Ok(starts)
}

/// Shifts seconds into window cells, clips to `[0, l_w]` and applies the
/// inside-fraction rule.
fn project_instances(
    gts: &[GroundTruthInstance],
    to_cells: impl Fn(f64) -> f64,
    l_w: usize,
    min_inside_fraction: f64,
) -> Vec<GroundTruthInstance> {
    gts.iter()
        .filter_map(|gt| {
            let s = to_cells(gt.t_start);
            let e = to_cells(gt.t_end);
            let cs = s.max(0.0);
            let ce = e.min(l_w as f64);
            if ce <= cs || (ce - cs) < min_inside_fraction * (e - s) {
                return None;
            }
            Some(GroundTruthInstance {
                t_start: cs,
                t_end: ce,
                label: gt.label.clone(),
            })
        })
        .collect()
}

/// Whole video linearly resampled to a single window of `l_w` cells.
pub fn rescale_to_window(
    fs: &FeatureSequence,
    gts: &[GroundTruthInstance],
    l_w: usize,
) -> Result<ObservationWindow> {
    if l_w == 0 {
        return Err(Error::config("window length must be at least 1"));
    }
    let features = if fs.len() == l_w {
        fs.features.clone()
    } else {
        linear_resize(&fs.features, l_w)?
    };
    let cells_per_second = l_w as f64 / fs.duration;
    Ok(ObservationWindow {
        video_id: fs.video_id.clone(),
        window_start: 0,
        origin_seconds: 0.0,
        seconds_per_cell: fs.duration / l_w as f64,
        features,
        gts: project_instances(gts, |t| t * cells_per_second, l_w, 0.0),
    })
}

/// Sliding windows that keep at least one instance. Sequences shorter than
/// the window become one rescaled window.
pub fn build_windows(
    fs: &FeatureSequence,
    gts: &[GroundTruthInstance],
    cfg: &WindowConfig,
) -> Result<Vec<ObservationWindow>> {
    let l_w = cfg.length;
    check_overlap(l_w, cfg.overlap)?;
    if fs.len() < l_w {
        let w = rescale_to_window(fs, gts, l_w)?;
        return Ok(if w.gts.is_empty() { Vec::new() } else { vec![w] });
    }
    let seconds_per_snippet = fs.duration / fs.len() as f64;
    let mut windows = Vec::new();
    for start in candidate_window_starts(fs.len(), l_w, cfg.overlap)? {
        let kept = project_instances(
            gts,
            |t| fs.seconds_to_snippets(t) - start as f64,
            l_w,
            cfg.min_inside_fraction,
        );
        if kept.is_empty() {
            continue;
        }
        let mut features = Matrix2D::zeros(l_w, fs.channels());
        for r in 0..l_w {
            features.row_mut(r).copy_from_slice(fs.features.row(start + r));
        }
        windows.push(ObservationWindow {
            video_id: fs.video_id.clone(),
            window_start: start,
            origin_seconds: start as f64 * seconds_per_snippet,
            seconds_per_cell: seconds_per_snippet,
            features,
            gts: kept,
        });
    }
    Ok(windows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(len: usize) -> FeatureSequence {
        let values = (0..len * 2).map(|v| v as f64).collect();
        // stride 16 at 16 fps: one second per snippet
        FeatureSequence::new("v", 16, 16.0, Matrix2D::new(len, 2, values).unwrap()).unwrap()
    }

    fn gt(s: f64, e: f64) -> GroundTruthInstance {
        GroundTruthInstance::new(s, e, "a").unwrap()
    }

    #[test]
    fn stride_arithmetic() {
        assert_eq!(
            candidate_window_starts(250, 100, 0.75).unwrap(),
            vec![0, 25, 50, 75, 100, 125, 150]
        );
        assert_eq!(candidate_window_starts(260, 100, 0.75).unwrap().last(), Some(&160));
        assert!(candidate_window_starts(250, 1, 0.75).is_err());
        assert!(candidate_window_starts(250, 100, 1.0).is_err());
    }

    #[test]
    fn retention_rules() {
        let fs = seq(250);
        assert!(build_windows(&fs, &[], &WindowConfig::default()).unwrap().is_empty());
        let ws = build_windows(&fs, &[gt(10.0, 20.0)], &WindowConfig::default()).unwrap();
        assert_eq!(ws.iter().map(|w| w.window_start).collect::<Vec<_>>(), vec![0]);
        assert_eq!(ws[0].gts[0].t_start, 10.0);
        let exact = seq(100);
        let ws = build_windows(&exact, &[gt(3.0, 9.0)], &WindowConfig::default()).unwrap();
        assert_eq!(ws.len(), 1);
        assert_eq!(ws[0].window_start, 0);
    }

    #[test]
    fn clipping_keeps_mostly_inside_instances() {
        let fs = seq(250);
        // [90, 110] lies 50% in window 0, fully in 25..100, and 50% in 100
        let ws = build_windows(&fs, &[gt(90.0, 110.0)], &WindowConfig::default()).unwrap();
        let starts: Vec<usize> = ws.iter().map(|w| w.window_start).collect();
        assert_eq!(starts, vec![0, 25, 50, 75, 100]);
        assert_eq!((ws[0].gts[0].t_start, ws[0].gts[0].t_end), (90.0, 100.0));
        assert_eq!((ws[4].gts[0].t_start, ws[4].gts[0].t_end), (0.0, 10.0));
    }

    #[test]
    fn short_sequence_is_rescaled() {
        let fs = seq(50);
        let ws = build_windows(&fs, &[gt(10.0, 20.0)], &WindowConfig::default()).unwrap();
        assert_eq!(ws.len(), 1);
        assert_eq!(ws[0].len(), 100);
        assert_eq!((ws[0].gts[0].t_start, ws[0].gts[0].t_end), (20.0, 40.0));
    }

    #[test]
    fn rescale_examples() {
        let fs = seq(100);
        let w = rescale_to_window(&fs, &[gt(0.0, 100.0)], 100).unwrap();
        assert_eq!(w.features, fs.features);
        assert_eq!((w.gts[0].t_start, w.gts[0].t_end), (0.0, 100.0));
        let fs = seq(50);
        let w = rescale_to_window(&fs, &[gt(10.0, 20.0)], 100).unwrap();
        assert_eq!((w.gts[0].t_start, w.gts[0].t_end), (20.0, 40.0));
        assert_eq!(w.to_seconds(40.0), 20.0);
    }
}
