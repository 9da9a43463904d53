//! Implementation-independent checks of partitioning, FPS and curve ranks.

use std::collections::BTreeMap;

use proptest::prelude::*;
use ptk_core::curve::{hilbert_rank, morton_rank};
use ptk_core::partition::{compute_splits, partition, CellIndex};
use ptk_core::patch::{fps, standardize};
use ptk_core::{Point, PointCloud};

/// Interval index by scanning the equal-division boundaries of `[lo, hi]`; the last
/// interval is closed.
fn scan_interval(v: f64, lo: f64, hi: f64, splits: usize) -> usize {
    let width = (hi - lo) / splits as f64;
    if width <= 0.0 {
        return 0;
    }
    for i in 0..splits {
        let start = lo + i as f64 * width;
        let end = lo + (i + 1) as f64 * width;
        let last = i + 1 == splits;
        if start <= v && (v < end || last) {
            return i;
        }
    }
    0
}

fn oracle_cells(cloud: &PointCloud, m: usize, k: usize) -> BTreeMap<CellIndex, Vec<usize>> {
    let pts = cloud.points();
    let n = pts.len();
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in pts {
        for a in 0..3 {
            lo[a] = lo[a].min(p.xyz[a]);
            hi[a] = hi[a].max(p.xyz[a]);
        }
    }
    let splits = |count: usize, target: usize| (count / target).max(1).min(k);

    let sz = splits(n, m * k * k);
    let zs: Vec<usize> = pts.iter().map(|p| scan_interval(p.xyz[2], lo[2], hi[2], sz)).collect();
    let sy: Vec<usize> = (0..sz)
        .map(|z| splits(zs.iter().filter(|&&v| v == z).count(), m * k))
        .collect();
    let ys: Vec<usize> = (0..n).map(|i| scan_interval(pts[i].xyz[1], lo[1], hi[1], sy[zs[i]])).collect();
    let mut out: BTreeMap<CellIndex, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let row = (0..n).filter(|&j| zs[j] == zs[i] && ys[j] == ys[i]).count();
        let sx = splits(row, m);
        let x = scan_interval(pts[i].xyz[0], lo[0], hi[0], sx);
        out.entry(CellIndex::new(zs[i], ys[i], x)).or_default().push(i);
    }
    out
}

fn cloud_strategy(max_n: usize) -> impl Strategy<Value = PointCloud> {
    prop::collection::vec(
        (prop::array::uniform3(-5.0f64..5.0), prop::array::uniform3(0.0f64..=1.0)),
        1..max_n,
    )
    .prop_map(|pts| {
        let pts = pts.into_iter().map(|(xyz, rgb)| Point::new(xyz, rgb)).collect();
        PointCloud::new(pts, "prop").unwrap().normalize()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partition_matches_oracle(cloud in cloud_strategy(400), m in 1usize..24, k in 1usize..6) {
        let grid = partition(&cloud, m, k).unwrap();
        prop_assert_eq!(&grid.cells, &oracle_cells(&cloud, m, k));

        let mut seen = vec![0usize; cloud.len()];
        for (c, members) in &grid.cells {
            prop_assert!(!members.is_empty());
            prop_assert!(c.z < grid.plan.splits_z);
            prop_assert!(c.y < grid.plan.splits_y[c.z]);
            prop_assert!(c.x < grid.plan.splits_x[c.z][c.y]);
            for &i in members {
                seen[i] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&s| s == 1));
        let all = std::iter::once(grid.plan.splits_z)
            .chain(grid.plan.splits_y.iter().copied())
            .chain(grid.plan.splits_x.iter().flatten().copied());
        for s in all {
            prop_assert!((1..=k).contains(&s));
        }
    }

    #[test]
    fn splits_formula(n in 1usize..10_000_000, target in 1usize..100_000, k in 1usize..10) {
        prop_assert_eq!(compute_splits(n, target, k), (n / target).clamp(1, k));
    }

    #[test]
    fn membership_independent_of_input_order(cloud in cloud_strategy(200), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut order: Vec<usize> = (0..cloud.len()).collect();
        order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let shuffled = PointCloud::new(order.iter().map(|&i| cloud.points()[i]).collect(), "s").unwrap();
        let a = partition(&cloud, 4, 3).unwrap();
        let b = partition(&shuffled, 4, 3).unwrap();
        prop_assert_eq!(a.plan, b.plan);
        for (cell, members) in &a.cells {
            let mut mapped: Vec<usize> = b.cells[cell].iter().map(|&j| order[j]).collect();
            mapped.sort();
            prop_assert_eq!(&mapped, members);
        }
    }

    #[test]
    fn z_index_monotone(zs in prop::collection::vec(0.0f64..=1.0, 2..50), splits in 1usize..6) {
        let bounds = ptk_core::AxisBounds { min: [0.0; 3], max: [1.0; 3] };
        let mut sorted = zs.clone();
        sorted.sort_by(f64::total_cmp);
        let idx: Vec<usize> = sorted
            .iter()
            .map(|&z| ptk_core::partition::cell_of([0.5, 0.5, z], &bounds, [splits, 1, 1]).unwrap().z)
            .collect();
        prop_assert!(idx.windows(2).all(|w| w[0] <= w[1]));
    }
}

/// Greedy FPS recomputed from scratch at every step.
fn brute_fps(points: &[[f64; 3]], target: usize, seed: usize) -> Vec<usize> {
    let d2 = |a: &[f64; 3], b: &[f64; 3]| (0..3).map(|i| (a[i] - b[i]) * (a[i] - b[i])).sum::<f64>();
    let mut selected = vec![seed];
    while selected.len() < target {
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for i in 0..points.len() {
            if selected.contains(&i) {
                continue;
            }
            let d = selected.iter().map(|&s| d2(&points[i], &points[s])).fold(f64::INFINITY, f64::min);
            if d > best_d {
                best = i;
                best_d = d;
            }
        }
        selected.push(best);
    }
    selected
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn fps_matches_brute_force(
        pts in prop::collection::vec(prop::array::uniform3(0.0f64..1.0), 1..64),
        frac in 0.0f64..=1.0,
        seed_frac in 0.0f64..1.0,
    ) {
        let target = ((pts.len() as f64 * frac) as usize).clamp(1, pts.len());
        let seed = (pts.len() as f64 * seed_frac) as usize;
        prop_assert_eq!(fps(&pts, target, seed).unwrap(), brute_fps(&pts, target, seed));
    }

    #[test]
    fn fps_on_grid_ties(n in 1usize..5, target_frac in 0.0f64..=1.0) {
        // Integer lattices produce many equal distances.
        let pts: Vec<[f64; 3]> = (0..n * n * n)
            .map(|i| [(i % n) as f64, ((i / n) % n) as f64, (i / (n * n)) as f64])
            .collect();
        let target = ((pts.len() as f64 * target_frac) as usize).clamp(1, pts.len());
        prop_assert_eq!(fps(&pts, target, 0).unwrap(), brute_fps(&pts, target, 0));
    }

    #[test]
    fn standardize_size_and_provenance(
        n in 1usize..80,
        m in 1usize..40,
        coords in prop::collection::vec(prop::array::uniform3(0.0f64..1.0), 80),
    ) {
        let points: Vec<Point> = coords[..n].iter().map(|&c| Point::gray(c)).collect();
        let members: Vec<usize> = (0..n).collect();
        let patch = standardize(&points, &members, CellIndex::new(0, 0, 0), m).unwrap();
        prop_assert_eq!(patch.len(), m);
        prop_assert_eq!(patch.flatten().len(), m * 6);
        prop_assert!(patch.provenance.iter().all(|i| members.contains(i)));
        for (p, &i) in patch.points.iter().zip(&patch.provenance) {
            prop_assert_eq!(*p, points[i]);
        }
        if n <= m {
            // Replication keeps every member.
            let mut all = patch.provenance.clone();
            all.sort();
            all.dedup();
            prop_assert_eq!(all, members);
        } else {
            let mut distinct = patch.provenance.clone();
            distinct.sort();
            distinct.dedup();
            prop_assert_eq!(distinct.len(), m);
        }
    }

    #[test]
    fn standardize_ignores_member_order(
        coords in prop::collection::vec(prop::array::uniform3(0.0f64..1.0), 1..40),
        m in 1usize..30,
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let points: Vec<Point> = coords.iter().map(|&c| Point::gray(c)).collect();
        let members: Vec<usize> = (0..points.len()).collect();
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let a = standardize(&points, &members, CellIndex::new(0, 0, 0), m).unwrap();
        let b = standardize(&points, &shuffled, CellIndex::new(0, 0, 0), m).unwrap();
        // Oversized cells are order independent outright; for undersized ones cyclic
        // replication depends on member order, but only through which members repeat.
        if points.len() >= m {
            prop_assert_eq!(a.flatten(), b.flatten());
        } else {
            prop_assert_eq!(a.len(), b.len());
        }
    }
}

#[test]
fn standardize_oversized_matches_brute_fps() {
    // 2m well-separated points on a line, seeded at the point nearest the centroid.
    let m = 6;
    let xs: Vec<f64> = (0..2 * m).map(|i| (i * i) as f64).collect();
    let points: Vec<Point> = xs.iter().map(|&x| Point::gray([x, 0.0, 0.0])).collect();
    let members: Vec<usize> = (0..points.len()).collect();
    let patch = standardize(&points, &members, CellIndex::new(0, 0, 0), m).unwrap();

    let xyz: Vec<[f64; 3]> = points.iter().map(|p| p.xyz).collect();
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let seed = (0..xs.len())
        .min_by(|&a, &b| (xs[a] - mean).abs().total_cmp(&(xs[b] - mean).abs()))
        .unwrap();
    let mut expected = brute_fps(&xyz, m, seed);
    expected.sort();
    let mut got = patch.provenance.clone();
    got.sort();
    assert_eq!(got, expected);
}

#[test]
fn curves_are_bijections_and_hilbert_is_adjacent() {
    for order in 1..=3u32 {
        let side = 1usize << order;
        let total = side * side * side;
        let mut morton = vec![usize::MAX; total];
        let mut hilbert = vec![usize::MAX; total];
        for z in 0..side {
            for y in 0..side {
                for x in 0..side {
                    let c = CellIndex::new(z, y, x);
                    let mr = morton_rank(c, order).unwrap() as usize;
                    let hr = hilbert_rank(c, order).unwrap() as usize;
                    assert_eq!(morton[mr], usize::MAX, "morton collision at order {order}");
                    assert_eq!(hilbert[hr], usize::MAX, "hilbert collision at order {order}");
                    morton[mr] = (z * side + y) * side + x;
                    hilbert[hr] = (z * side + y) * side + x;
                }
            }
        }
        let coords = |flat: usize| [flat / (side * side), (flat / side) % side, flat % side];
        for w in hilbert.windows(2) {
            let (a, b) = (coords(w[0]), coords(w[1]));
            let steps: usize = (0..3).map(|i| a[i].abs_diff(b[i])).sum();
            let cheb = (0..3).map(|i| a[i].abs_diff(b[i])).max().unwrap();
            assert_eq!(cheb, 1);
            assert_eq!(steps, 1, "hilbert neighbours must share a face");
        }
    }
}
