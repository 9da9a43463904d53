//! Fixed-size patches: farthest-point sampling for oversized cells, cyclic
//! replication for undersized ones, then a canonical point order so the flattened
//! vector does not depend on input order.

use std::cmp::Ordering;

use crate::cloud::{Point, PointCloud};
use crate::error::{Error, Result};
use crate::partition::{CellIndex, PatchGrid};

/// Values per point in a flattened patch: x, y, z, r, g, b.
pub const CHANNELS: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub index: CellIndex,
    /// Exactly `m` points in canonical order.
    pub points: Vec<Point>,
    /// Source-cloud index of each entry in `points`; repeats when replicated.
    pub provenance: Vec<usize>,
}

impl Patch {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Concatenated `(x, y, z, r, g, b)` of every point, length `m * 6`.
    pub fn flatten(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| p.channels()).collect()
    }
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Greedy farthest-point sampling starting at `seed`. Each step takes the point whose
/// distance to the nearest selected point is largest; ties go to the smaller index.
pub fn fps(points: &[[f64; 3]], target: usize, seed: usize) -> Result<Vec<usize>> {
    if target > points.len() {
        return Err(Error::TargetExceedsInput {
            target,
            available: points.len(),
        });
    }
    if target == 0 {
        return Ok(Vec::new());
    }
    if seed >= points.len() {
        return Err(Error::InvalidParameter(format!(
            "fps seed {seed} out of range for {} points",
            points.len()
        )));
    }

    let mut selected = Vec::with_capacity(target);
    let mut taken = vec![false; points.len()];
    // Squared distance to the nearest selected point.
    let mut nearest = vec![f64::INFINITY; points.len()];
    let mut current = seed;
    loop {
        selected.push(current);
        taken[current] = true;
        if selected.len() == target {
            break;
        }
        let anchor = points[current];
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let d = dist2(p, &anchor);
            if d < nearest[i] {
                nearest[i] = d;
            }
            // Strict comparison keeps the first (smallest) index on ties.
            if best.is_none_or(|(_, bd)| nearest[i] > bd) {
                best = Some((i, nearest[i]));
            }
        }
        current = best.expect("unselected points remain").0;
    }
    Ok(selected)
}

/// Position (within `points`) of the point closest to their centroid; ties go to
/// the smaller position.
pub fn nearest_to_centroid(points: &[[f64; 3]]) -> Option<usize> {
    if points.is_empty() {
        return None;
    }
    let n = points.len() as f64;
    let mut c = [0.0; 3];
    for p in points {
        for a in 0..3 {
            c[a] += p[a];
        }
    }
    let c = c.map(|v| v / n);
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, p) in points.iter().enumerate() {
        let d = dist2(p, &c);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    Some(best)
}

fn canonical_cmp(a: &Point, b: &Point) -> Ordering {
    let key = |p: &Point| [p.xyz[2], p.xyz[1], p.xyz[0], p.rgb[0], p.rgb[1], p.rgb[2]];
    let (ka, kb) = (key(a), key(b));
    ka.iter()
        .zip(&kb)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Turns one cell into a patch of exactly `m` points.
///
/// `members` are indices into `points` (the whole source cloud). More than `m`
/// members are reduced by [`fps`] seeded at the member nearest the cell centroid;
/// fewer are repeated cyclically in member order. The result is sorted by
/// `(z, y, x, r, g, b)`.
pub fn standardize(points: &[Point], members: &[usize], index: CellIndex, m: usize) -> Result<Patch> {
    if members.is_empty() {
        return Err(Error::InvalidParameter(format!("cell {index} is empty")));
    }
    if m == 0 {
        return Err(Error::InvalidParameter("m must be >= 1".into()));
    }
    let chosen: Vec<usize> = match members.len().cmp(&m) {
        Ordering::Greater => {
            let xyz: Vec<[f64; 3]> = members.iter().map(|&i| points[i].xyz).collect();
            let seed = nearest_to_centroid(&xyz).expect("cell is non-empty");
            fps(&xyz, m, seed)?.into_iter().map(|i| members[i]).collect()
        }
        Ordering::Less => members.iter().copied().cycle().take(m).collect(),
        Ordering::Equal => members.to_vec(),
    };

    let mut pairs: Vec<(Point, usize)> = chosen.into_iter().map(|i| (points[i], i)).collect();
    pairs.sort_by(|a, b| canonical_cmp(&a.0, &b.0).then(a.1.cmp(&b.1)));
    let (points, provenance) = pairs.into_iter().unzip();
    Ok(Patch {
        index,
        points,
        provenance,
    })
}

/// Standardizes every realized cell of `grid`, in (z, y, x) order.
pub fn standardize_grid(cloud: &PointCloud, grid: &PatchGrid) -> Result<Vec<Patch>> {
    grid.cells
        .iter()
        .map(|(&index, members)| standardize(cloud.points(), members, index, grid.plan.m))
        .collect()
}
