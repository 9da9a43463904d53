use std::fs;

use proptest::prelude::*;
use ptk_core::cloud::{parse_xyz, write_xyz};
use ptk_core::fixtures::lattice;
use ptk_core::partition::partition;
use ptk_core::patch::standardize_grid;
use ptk_core::sequence::{build_sequence, encode_matrix, encode_tokens, export, import, validate};
use ptk_core::{
    tokenize, CellIndex, OrderingStrategy, Point, PointCloud, StrategyKind, Token, TokenizerConfig,
};

fn random_cloud() -> impl Strategy<Value = PointCloud> {
    prop::collection::vec(
        (prop::array::uniform3(-3.0f64..3.0), prop::array::uniform3(0.0f64..=1.0)),
        1..600,
    )
    .prop_map(|v| PointCloud::new(v.into_iter().map(|(a, b)| Point::new(a, b)).collect(), "p").unwrap())
}

#[test]
fn lattice_2x3x3_sequence_layout() {
    let m = 8;
    let out = tokenize(&lattice(2, 3, 3, m), &TokenizerConfig::with_mk(m, 3)).unwrap();
    use Token::*;
    let row = |s: usize| [Patch(s), Patch(s + 1), Patch(s + 2)];
    let mut expected = vec![PcStart];
    for (i, start) in [0, 3, 6, 9, 12, 15].into_iter().enumerate() {
        expected.extend(row(start));
        match i {
            2 => expected.push(LayerSep),
            5 => {}
            _ => expected.push(RowSep),
        }
    }
    expected.push(PcEnd);
    assert_eq!(out.sequence.tokens, expected);
    let stats = validate(&out.sequence.tokens, true).unwrap();
    assert_eq!((stats.patches, stats.layer_seps, stats.row_seps), (18, 1, 4));
    assert_eq!(stats.total - 2, 23);
    let cells: Vec<CellIndex> = out.patches.iter().map(|p| p.index).collect();
    assert_eq!(cells.first(), Some(&CellIndex::new(0, 0, 0)));
    assert_eq!(cells.last(), Some(&CellIndex::new(1, 2, 2)));
}

#[test]
fn separators_can_be_dropped() {
    let m = 8;
    let config = TokenizerConfig {
        separators: false,
        ..TokenizerConfig::with_mk(m, 3)
    };
    let out = tokenize(&lattice(2, 3, 3, m), &config).unwrap();
    let stats = validate(&out.sequence.tokens, false).unwrap();
    assert_eq!((stats.patches, stats.layer_seps, stats.row_seps), (18, 0, 0));
}

#[test]
fn default_config_gives_3072_wide_rows() {
    let out = tokenize(&lattice(1, 1, 2, 40), &TokenizerConfig::default()).unwrap();
    assert_eq!(out.sequence.patch_dim, 3072);
    assert_eq!(out.sequence.patch_count(), 1);
    assert_eq!(out.patches[0].len(), 512);
}

fn dense_grid_counts(z: usize, y: usize, x: usize) -> (usize, usize) {
    let m = 4;
    let k = z.max(y).max(x);
    let cloud = lattice(z, y, x, m * (k * k * k) / (z * y * x).max(1)).normalize();
    let grid = partition(&cloud, m, k).unwrap();
    let patches = standardize_grid(&cloud, &grid).unwrap();
    let seq = build_sequence(&cloud, &grid, &patches, OrderingStrategy::Zyx, true).unwrap();
    let s = seq.stats();
    (s.layer_seps, s.row_seps)
}

#[test]
fn dense_grid_separator_counts() {
    assert_eq!(dense_grid_counts(3, 3, 3), (2, 3 * 2));
    assert_eq!(dense_grid_counts(2, 2, 2), (1, 2));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn zyx_grammar_holds(cloud in random_cloud(), m in 1usize..16, k in 1usize..5) {
        let out = tokenize(&cloud, &TokenizerConfig::with_mk(m, k)).unwrap();
        let tokens = &out.sequence.tokens;
        validate(tokens, true).unwrap();
        // Walk consecutive patches and check the separator between them.
        let mut prev: Option<CellIndex> = None;
        let mut sep: Option<Token> = None;
        for t in tokens {
            match t {
                Token::Patch(slot) => {
                    let cell = out.patches.iter().map(|p| p.index).nth(*slot).unwrap();
                    if let Some(a) = prev {
                        prop_assert!(a < cell);
                        let expected = if a.z != cell.z {
                            Some(Token::LayerSep)
                        } else if a.y != cell.y {
                            Some(Token::RowSep)
                        } else {
                            None
                        };
                        prop_assert_eq!(sep, expected);
                    }
                    prev = Some(cell);
                    sep = None;
                }
                Token::LayerSep | Token::RowSep => sep = Some(*t),
                _ => {}
            }
        }
        prop_assert_eq!(out.sequence.patch_count(), out.grid.len());
    }

    #[test]
    fn every_strategy_is_a_permutation(cloud in random_cloud(), m in 1usize..12) {
        let zyx = tokenize(&cloud, &TokenizerConfig::with_mk(m, 3)).unwrap();
        let rows = |s: &ptk_core::TokenSequence| {
            let mut r: Vec<Vec<u64>> = (0..s.patch_count())
                .map(|i| s.patch_row(i).iter().map(|v| v.to_bits()).collect())
                .collect();
            r.sort();
            r
        };
        for kind in [StrategyKind::Hilbert, StrategyKind::Morton] {
            let config = TokenizerConfig { strategy: kind, ..TokenizerConfig::with_mk(m, 3) };
            let other = tokenize(&cloud, &config).unwrap();
            validate(&other.sequence.tokens, false).unwrap();
            prop_assert_eq!(rows(&other.sequence), rows(&zyx.sequence));
        }
    }

    #[test]
    fn normalize_idempotent_and_preserving(cloud in random_cloud()) {
        let once = cloud.normalize();
        let twice = once.normalize();
        prop_assert_eq!(&once, &twice);
        prop_assert_eq!(once.len(), cloud.len());
        prop_assert!(once.is_normalized());
        for (a, b) in once.points().iter().zip(cloud.points()) {
            prop_assert_eq!(a.rgb, b.rgb);
        }
    }

    #[test]
    fn xyz_round_trip(cloud in random_cloud()) {
        let mut buf = Vec::new();
        write_xyz(&cloud, &mut buf).unwrap();
        let back = parse_xyz(std::str::from_utf8(&buf).unwrap(), "p").unwrap();
        prop_assert_eq!(back.points(), cloud.points());
    }

    #[test]
    fn export_import_round_trip(cloud in random_cloud(), m in 1usize..10) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.tokens");
        let seq = tokenize(&cloud, &TokenizerConfig::with_mk(m, 3)).unwrap().sequence;
        export(&seq, &path).unwrap();
        prop_assert_eq!(import(&path).unwrap(), seq);
    }
}

#[test]
fn tokenize_is_byte_deterministic() {
    let cloud = lattice(3, 2, 2, 13);
    let config = TokenizerConfig::with_mk(5, 4);
    let a = tokenize(&cloud, &config).unwrap().sequence;
    let b = tokenize(&cloud, &config).unwrap().sequence;
    assert_eq!(encode_tokens(&a), encode_tokens(&b));
    assert_eq!(encode_matrix(&a), encode_matrix(&b));

    let dir = tempfile::tempdir().unwrap();
    let (p1, p2) = (dir.path().join("a.tokens"), dir.path().join("b.tokens"));
    export(&a, &p1).unwrap();
    export(&b, &p2).unwrap();
    assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    assert_eq!(fs::read(p1.with_extension("ptkm")).unwrap(), fs::read(p2.with_extension("ptkm")).unwrap());
}

#[test]
fn tiny_cloud_replicates_to_m() {
    let cloud = PointCloud::new(
        vec![Point::gray([0.0, 0.0, 0.0]), Point::gray([1.0, 0.0, 0.0]), Point::gray([0.0, 1.0, 0.0])],
        "tiny",
    )
    .unwrap();
    let out = tokenize(&cloud, &TokenizerConfig::default()).unwrap();
    assert_eq!(out.grid.len(), 1);
    assert_eq!(out.patches[0].len(), 512);
    assert_eq!(out.sequence.tokens, vec![Token::PcStart, Token::Patch(0), Token::PcEnd]);
}

#[test]
fn fps_strategy_defaults_to_grid_patch_count() {
    let m = 8;
    let config = TokenizerConfig {
        strategy: StrategyKind::Fps(None),
        ..TokenizerConfig::with_mk(m, 3)
    };
    let out = tokenize(&lattice(2, 3, 3, m), &config).unwrap();
    assert_eq!(out.sequence.patch_count(), 18);
    assert_eq!(out.sequence.ordering, OrderingStrategy::FpsSampling { samples: 18 });
}
