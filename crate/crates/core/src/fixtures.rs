//! Deterministic synthetic clouds with a known patch layout.

use crate::cloud::{Point, PointCloud};

const STEPS: [f64; 3] = [0.618_033_988_749_895, 0.754_877_666_246_693, 0.569_840_290_998_053];

/// A `layers x rows x cols` lattice of compact clusters, `per_cell` points each, laid
/// out in the unit cube with z as the layer axis. Partitioning with `m = per_cell`
/// and `k = max(layers, rows, cols)` realizes one cell per cluster when the cluster
/// counts divide out evenly (for example 2 x 3 x 3 with k = 3).
pub fn lattice(layers: usize, rows: usize, cols: usize, per_cell: usize) -> PointCloud {
    let mut points = Vec::with_capacity(layers * rows * cols * per_cell);
    let spread = 0.2;
    for z in 0..layers {
        for y in 0..rows {
            for x in 0..cols {
                let center = [
                    (x as f64 + 0.5) / cols as f64,
                    (y as f64 + 0.5) / rows as f64,
                    (z as f64 + 0.5) / layers as f64,
                ];
                let extent = [cols, rows, layers].map(|n| spread / n as f64);
                let cell = (z * rows + y) * cols + x;
                let rgb = [
                    (x as f64 + 1.0) / (cols as f64 + 1.0),
                    (y as f64 + 1.0) / (rows as f64 + 1.0),
                    (z as f64 + 1.0) / (layers as f64 + 1.0),
                ];
                for j in 0..per_cell {
                    // Low-discrepancy offsets in [-extent, extent).
                    let t = (cell * per_cell + j + 1) as f64;
                    let xyz = [0, 1, 2].map(|a| center[a] + extent[a] * (2.0 * (t * STEPS[a]).fract() - 1.0));
                    points.push(Point::new(xyz, rgb));
                }
            }
        }
    }
    PointCloud::new(points, format!("lattice-{layers}x{rows}x{cols}x{per_cell}"))
        .expect("lattice parameters must be positive")
}
