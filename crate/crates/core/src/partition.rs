//! Adaptive hierarchical partitioning: split counts per axis are derived from point
//! counts (Z from the whole cloud, Y per layer, X per row), and points fall into
//! equal-width intervals of the cloud's bounding box on each axis.

use std::collections::BTreeMap;
use std::fmt;

use crate::cloud::{AxisBounds, PointCloud};
use crate::error::{Error, Result};

/// Slack allowed by [`cell_of`] for points sitting just outside the bounds.
pub const BOUNDS_TOLERANCE: f64 = 1e-9;

/// Grid coordinates of a cell. Field order makes the derived `Ord` lexicographic
/// in (z, y, x).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellIndex {
    pub z: usize,
    pub y: usize,
    pub x: usize,
}

impl CellIndex {
    pub fn new(z: usize, y: usize, x: usize) -> Self {
        Self { z, y, x }
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.z, self.y, self.x]
    }
}

impl fmt::Display for CellIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.z, self.y, self.x)
    }
}

/// Number of equal intervals for one axis: `clamp(n_points / n_target, 1, k_max)`.
pub fn compute_splits(n_points: usize, n_target: usize, k_max: usize) -> usize {
    debug_assert!(n_target >= 1 && k_max >= 1);
    (n_points / n_target.max(1)).clamp(1, k_max.max(1))
}

/// Per-axis split counts actually used for a grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub splits_z: usize,
    /// One entry per Z layer.
    pub splits_y: Vec<usize>,
    /// `splits_x[z][y]` for every (layer, row).
    pub splits_x: Vec<Vec<usize>>,
    pub m: usize,
    pub k: usize,
}

impl SplitPlan {
    pub fn max_splits(&self) -> usize {
        let y = self.splits_y.iter().copied().max().unwrap_or(1);
        let x = self.splits_x.iter().flatten().copied().max().unwrap_or(1);
        self.splits_z.max(y).max(x)
    }

    /// Compact one-line description, e.g. `z=2 y=[3,3] x=[[3,3,3],[3,3,3]]`.
    pub fn summary(&self) -> String {
        let join = |v: &[usize]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",");
        let rows: Vec<String> = self.splits_x.iter().map(|r| format!("[{}]", join(r))).collect();
        format!("z={} y=[{}] x=[{}]", self.splits_z, join(&self.splits_y), rows.join(","))
    }
}

/// Which point count feeds the split computation below the Z level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitCounting {
    /// Y splits from the layer's count, X splits from the row's count.
    #[default]
    PerParent,
    /// Every level uses the total cloud size.
    Global,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    /// Only non-empty cells, each holding indices into the source cloud in input order.
    pub cells: BTreeMap<CellIndex, Vec<usize>>,
    pub plan: SplitPlan,
    pub bounds: AxisBounds,
}

impl PatchGrid {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Cell a point falls into under this grid's bounds and split plan.
    pub fn locate(&self, point: [f64; 3]) -> Result<CellIndex> {
        let z = cell_of(point, &self.bounds, [self.plan.splits_z, 1, 1])?.z;
        let y = cell_of(point, &self.bounds, [1, self.plan.splits_y[z], 1])?.y;
        cell_of(point, &self.bounds, [z + 1, y + 1, self.plan.splits_x[z][y]])
            .map(|c| CellIndex::new(z, y, c.x))
    }

    /// One `z y x count` line per realized cell, lexicographic order.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (c, members) in &self.cells {
            out.push_str(&format!("{} {} {} {}\n", c.z, c.y, c.x, members.len()));
        }
        out
    }
}

const Z: usize = 2;
const Y: usize = 1;
const X: usize = 0;

/// Interval index of `value` among `splits` equal intervals of `[lo, hi]`.
/// Interval `i` is `[lo + i*w, lo + (i+1)*w)` except the last, which is closed.
fn axis_index(value: f64, lo: f64, hi: f64, splits: usize) -> usize {
    let width = (hi - lo) / splits as f64;
    if width <= 0.0 || splits == 1 {
        return 0;
    }
    let boundary = |i: usize| lo + i as f64 * width;
    let mut idx = (((value - lo) / width).floor().max(0.0) as usize).min(splits - 1);
    // The division can round across a boundary; settle on the boundary comparison.
    while idx > 0 && value < boundary(idx) {
        idx -= 1;
    }
    while idx + 1 < splits && value >= boundary(idx + 1) {
        idx += 1;
    }
    idx
}

/// Cell of a single point given the grid bounds and the (z, y, x) split counts that
/// apply to it.
pub fn cell_of(point: [f64; 3], bounds: &AxisBounds, splits: [usize; 3]) -> Result<CellIndex> {
    for a in 0..3 {
        if point[a] < bounds.min[a] - BOUNDS_TOLERANCE || point[a] > bounds.max[a] + BOUNDS_TOLERANCE {
            return Err(Error::OutOfBounds { point });
        }
    }
    if splits.contains(&0) {
        return Err(Error::InvalidParameter("split counts must be positive".into()));
    }
    let idx = |axis: usize, s: usize| axis_index(point[axis], bounds.min[axis], bounds.max[axis], s);
    Ok(CellIndex::new(idx(Z, splits[0]), idx(Y, splits[1]), idx(X, splits[2])))
}

pub fn partition(cloud: &PointCloud, m: usize, k: usize) -> Result<PatchGrid> {
    partition_with(cloud, m, k, SplitCounting::PerParent)
}

pub fn partition_with(cloud: &PointCloud, m: usize, k: usize, counting: SplitCounting) -> Result<PatchGrid> {
    if m == 0 || k == 0 {
        return Err(Error::InvalidParameter(format!("m and k must be >= 1 (m={m}, k={k})")));
    }
    let points = cloud.points();
    let n = points.len();
    let bounds = cloud.bounds();
    let axis = |p: usize, a: usize, s: usize| axis_index(points[p].xyz[a], bounds.min[a], bounds.max[a], s);
    let splits_for = |count: usize, target: usize| match counting {
        SplitCounting::PerParent => compute_splits(count.max(1), target, k),
        SplitCounting::Global => compute_splits(n, target, k),
    };

    let splits_z = compute_splits(n, m * k * k, k);
    let z_of: Vec<usize> = (0..n).map(|p| axis(p, Z, splits_z)).collect();

    let mut layer_counts = vec![0usize; splits_z];
    for &z in &z_of {
        layer_counts[z] += 1;
    }
    let splits_y: Vec<usize> = layer_counts.iter().map(|&c| splits_for(c, m * k)).collect();
    let y_of: Vec<usize> = (0..n).map(|p| axis(p, Y, splits_y[z_of[p]])).collect();

    let mut row_counts: Vec<Vec<usize>> = splits_y.iter().map(|&s| vec![0; s]).collect();
    for p in 0..n {
        row_counts[z_of[p]][y_of[p]] += 1;
    }
    let splits_x: Vec<Vec<usize>> = row_counts
        .iter()
        .map(|row| row.iter().map(|&c| splits_for(c, m)).collect())
        .collect();

    let mut cells: BTreeMap<CellIndex, Vec<usize>> = BTreeMap::new();
    for p in 0..n {
        let (z, y) = (z_of[p], y_of[p]);
        let x = axis(p, X, splits_x[z][y]);
        cells.entry(CellIndex::new(z, y, x)).or_default().push(p);
    }

    Ok(PatchGrid {
        cells,
        plan: SplitPlan {
            splits_z,
            splits_y,
            splits_x,
            m,
            k,
        },
        bounds,
    })
}
