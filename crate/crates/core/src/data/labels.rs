use super::ObservationWindow;
use crate::error::Result;
use crate::grid::ProposalGrid;
use crate::kernels::Matrix2D;
use crate::segment::{tiou, Segment};

/// Binary start/end targets, one per window cell.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryLabels {
    pub g_start: Vec<f64>,
    pub g_end: Vec<f64>,
}

/// Maximum IoU of each dense proposal `[i, i + j]` with the window's instances.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelConfidenceMap {
    pub grid: ProposalGrid,
    /// `D × T`, zero on invalid cells.
    pub values: Matrix2D,
}

impl LabelConfidenceMap {
    #[inline]
    pub fn get(&self, duration: usize, start: usize) -> f64 {
        self.values.get(duration, start)
    }

    pub fn valid_mask(&self) -> Vec<bool> {
        self.grid.mask()
    }
}

/// Cells whose index lies within a tenth of the instance duration of its start
/// (resp. end) are positive. Regions are closed intervals.
pub fn label_boundaries(window: &ObservationWindow) -> BoundaryLabels {
    let len = window.len();
    let mut g_start = vec![0.0; len];
    let mut g_end = vec![0.0; len];
    for gt in &window.gts {
        let margin = gt.duration() / 10.0;
        for (labels, centre) in [(&mut g_start, gt.t_start), (&mut g_end, gt.t_end)] {
            let (lo, hi) = (centre - margin, centre + margin);
            for (i, g) in labels.iter_mut().enumerate() {
                let x = i as f64;
                if lo <= x && x <= hi {
                    *g = 1.0;
                }
            }
        }
    }
    BoundaryLabels { g_start, g_end }
}

pub fn label_confidence_map(window: &ObservationWindow, max_duration: usize) -> Result<LabelConfidenceMap> {
    let grid = ProposalGrid::new(max_duration, window.len())?;
    let segments: Vec<Segment> = window.gts.iter().map(|g| g.segment()).collect();
    let mut values = grid.zeros();
    for (j, i) in grid.cells() {
        let proposal = Segment::new(i as f64, (i + j) as f64);
        let best = segments
            .iter()
            .map(|gt| tiou(&proposal, gt))
            .fold(0.0, f64::max);
        values.set(j, i, best);
    }
    Ok(LabelConfidenceMap { grid, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::GroundTruthInstance;

    fn window(len: usize, gts: &[(f64, f64)]) -> ObservationWindow {
        ObservationWindow {
            video_id: "v".into(),
            window_start: 0,
            origin_seconds: 0.0,
            seconds_per_cell: 1.0,
            features: Matrix2D::zeros(len, 1),
            gts: gts
                .iter()
                .map(|&(s, e)| GroundTruthInstance::new(s, e, "a").unwrap())
                .collect(),
        }
    }

    #[test]
    fn regions_are_tenth_of_duration() {
        let labels = label_boundaries(&window(100, &[(20.0, 40.0)]));
        let starts: Vec<usize> = (0..100).filter(|&i| labels.g_start[i] == 1.0).collect();
        let ends: Vec<usize> = (0..100).filter(|&i| labels.g_end[i] == 1.0).collect();
        assert_eq!(starts, (18..=22).collect::<Vec<_>>());
        assert_eq!(ends, (38..=42).collect::<Vec<_>>());
    }

    #[test]
    fn off_grid_region_gives_no_positives() {
        // d = 1 -> regions [10.3, 10.5] and [11.3, 11.5] contain no integer
        let labels = label_boundaries(&window(20, &[(10.4, 11.4)]));
        assert!(labels.g_start.iter().chain(&labels.g_end).all(|&v| v == 0.0));
    }

    #[test]
    fn confidence_map_values() {
        let w = window(50, &[(10.0, 30.0)]);
        let m = label_confidence_map(&w, 30).unwrap();
        assert_eq!(m.get(20, 10), 1.0);
        assert_eq!(m.get(3, 40), 0.0);
        assert_eq!(m.get(20, 20), 10.0 / 30.0);
        // invalid cell
        assert_eq!(m.get(25, 30), 0.0);
    }
}
