//! Dense `D × T` proposal grid shared by boundary, label and confidence maps.
//!
//! Cell `(j, i)` is the proposal starting at snippet `i` and ending at
//! snippet `i + j`; it is valid when `i + j < T`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::Matrix2D;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposalGrid {
    /// Maximum proposal duration `D` (number of rows).
    pub max_duration: usize,
    /// Temporal length `T` of the window (number of columns).
    pub length: usize,
}

impl ProposalGrid {
    pub fn new(max_duration: usize, length: usize) -> Result<Self> {
        if max_duration == 0 {
            return Err(Error::config("maximum duration D must be at least 1"));
        }
        if length == 0 {
            return Err(Error::config("window length T must be at least 1"));
        }
        Ok(Self {
            max_duration,
            length,
        })
    }

    #[inline]
    pub fn is_valid(&self, duration: usize, start: usize) -> bool {
        duration < self.max_duration && start + duration < self.length
    }

    /// Valid cells in row-major `(j, i)` order.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.max_duration)
            .flat_map(move |j| (0..self.length.saturating_sub(j)).map(move |i| (j, i)))
    }

    pub fn valid_count(&self) -> usize {
        self.cells().count()
    }

    /// Position of valid cell `(j, i)` in [`cells`](Self::cells) order.
    pub fn cell_index(&self, duration: usize, start: usize) -> usize {
        duration * self.length - duration * duration.saturating_sub(1) / 2 + start
    }

    /// Row-major validity mask of size `D × T`.
    pub fn mask(&self) -> Vec<bool> {
        (0..self.max_duration)
            .flat_map(|j| (0..self.length).map(move |i| i + j < self.length))
            .collect()
    }

    pub fn zeros(&self) -> Matrix2D {
        Matrix2D::zeros(self.max_duration, self.length)
    }

    pub fn check_shape(&self, m: &Matrix2D, what: &str) -> Result<()> {
        if m.rows() != self.max_duration || m.cols() != self.length {
            return Err(Error::input(format!(
                "{what} is {}x{}, expected {}x{}",
                m.rows(),
                m.cols(),
                self.max_duration,
                self.length
            )));
        }
        Ok(())
    }
}
