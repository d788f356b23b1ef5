//! Spatial error and contact-force metrics.

use crate::refinement::RefinementRun;
use crate::trajectory::Trajectory;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("trajectory `{0}` carries no wrench data")]
    NoWrenchData(String),
}

/// Outcome of a dynamic time warping alignment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DtwResult {
    /// Sum of Euclidean costs along the optimal warping path (m).
    pub cost: f64,
    /// Number of cells on that path.
    pub path_len: usize,
}

impl DtwResult {
    /// Cost per path cell (m).
    pub fn normalized(&self) -> f64 {
        self.cost / self.path_len as f64
    }
}

/// Lexicographic `(cost, length)` cell value; ties in cost prefer the shorter path.
#[derive(Clone, Copy)]
struct Cell {
    cost: f64,
    len: usize,
}

impl Cell {
    const INF: Cell = Cell {
        cost: f64::INFINITY,
        len: usize::MAX,
    };

    fn better(self, other: Cell) -> Cell {
        if other.cost < self.cost || (other.cost == self.cost && other.len < self.len) {
            other
        } else {
            self
        }
    }
}

/// DTW between two position sequences with steps `(1,0)`, `(0,1)`, `(1,1)`,
/// both endpoints matched, and Euclidean local cost.
///
/// `band` restricts cells to within that many columns of the diagonal
/// (rescaled for unequal lengths). Returns an infinite cost if the band
/// admits no path.
pub fn dtw(a: &[Vector3<f64>], b: &[Vector3<f64>], band: Option<usize>) -> DtwResult {
    assert!(!a.is_empty() && !b.is_empty(), "DTW needs non-empty sequences");
    let (n, m) = (a.len(), b.len());
    let window = |i: usize| -> (usize, usize) {
        match band {
            None => (0, m - 1),
            Some(w) => {
                let centre = if n == 1 { 0.0 } else { i as f64 * (m - 1) as f64 / (n - 1) as f64 };
                let lo = (centre - w as f64).ceil().max(0.0) as usize;
                let hi = ((centre + w as f64).floor() as usize).min(m - 1);
                (lo, hi)
            }
        }
    };
    let mut prev = vec![Cell::INF; m];
    let mut cur = vec![Cell::INF; m];
    for i in 0..n {
        let (lo, hi) = window(i);
        cur.iter_mut().for_each(|c| *c = Cell::INF);
        for j in lo..=hi {
            let d = (a[i] - b[j]).norm();
            let best = if i == 0 && j == 0 {
                Cell { cost: 0.0, len: 0 }
            } else {
                let mut best = Cell::INF;
                if i > 0 {
                    best = best.better(prev[j]);
                    if j > 0 {
                        best = best.better(prev[j - 1]);
                    }
                }
                if j > 0 {
                    best = best.better(cur[j - 1]);
                }
                best
            };
            if best.cost.is_finite() {
                cur[j] = Cell {
                    cost: best.cost + d,
                    len: best.len + 1,
                };
            }
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let last = prev[m - 1];
    DtwResult {
        cost: last.cost,
        path_len: if last.cost.is_finite() { last.len } else { 0 },
    }
}

/// Path-length normalized DTW distance in meters.
pub fn dtw_distance(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    dtw(a, b, None).normalized()
}

/// Normalized DTW between the positions of two trajectories.
pub fn trajectory_dtw(a: &Trajectory, b: &Trajectory) -> DtwResult {
    dtw(&a.positions(), &b.positions(), None)
}

/// `sqrt(mean |f|^2)` over all samples (N).
pub fn rms_contact_force(traj: &Trajectory) -> Result<f64, MetricsError> {
    let w = traj
        .wrenches()
        .ok_or_else(|| MetricsError::NoWrenchData(traj.label().to_string()))?;
    let sum: f64 = w.iter().map(|w| w.force.norm_squared()).sum();
    Ok((sum / w.len() as f64).sqrt())
}

/// One executed iteration of a refinement campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    /// 1-based index across the whole campaign.
    pub iteration: usize,
    pub speed: usize,
    /// 1-based index within the speed stage.
    pub stage_iteration: usize,
    /// Normalized DTW against the downsampled demonstration (m).
    pub dtw: Option<f64>,
    pub dtw_unnormalized: Option<f64>,
    pub rms_force: Option<f64>,
    pub peak_force: f64,
    pub stopped: bool,
}

/// Summary of a finished (or truncated) campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Final-iteration normalized DTW of the last stage reached.
    pub dtw: Option<f64>,
    pub rms_force: Option<f64>,
    pub rows: Vec<CurveRow>,
}

/// Per-iteration DTW and force rows, in execution order.
pub fn learning_curve(run: &RefinementRun) -> Vec<CurveRow> {
    let mut rows = Vec::new();
    for stage in &run.stages {
        for it in &stage.iterations {
            rows.push(CurveRow {
                iteration: rows.len() + 1,
                speed: stage.speed,
                stage_iteration: it.iteration,
                dtw: it.dtw.map(|d| d.normalized()),
                dtw_unnormalized: it.dtw.map(|d| d.cost),
                rms_force: it.rms_force,
                peak_force: it.peak_force,
                stopped: it.stop.is_some(),
            });
        }
    }
    rows
}

pub fn report(run: &RefinementRun) -> MetricReport {
    let rows = learning_curve(run);
    let last = rows.iter().rev().find(|r| !r.stopped);
    MetricReport {
        dtw: last.and_then(|r| r.dtw),
        rms_force: last.and_then(|r| r.rms_force),
        rows,
    }
}
