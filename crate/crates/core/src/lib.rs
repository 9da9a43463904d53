//! Point-cloud tokenization: adaptive Z→Y→X partitioning into patches, fixed-size
//! patch standardization, and token sequences with layer/row separators.
//!
//! The usual entry point is [`tokenize`], which normalizes a cloud, partitions it,
//! standardizes every cell to `m` points and builds the token sequence.

pub mod cloud;
pub mod curve;
pub mod error;
pub mod fixtures;
pub mod partition;
pub mod patch;
pub mod sequence;

pub use cloud::{AxisBounds, Point, PointCloud};
pub use error::{Error, Result};
pub use partition::{CellIndex, PatchGrid, SplitCounting, SplitPlan};
pub use patch::Patch;
pub use sequence::{OrderingStrategy, Token, TokenSequence};

/// Points per patch used when nothing else is configured.
pub const DEFAULT_M: usize = 512;
/// Maximum splits per axis used when nothing else is configured.
pub const DEFAULT_K: usize = 5;

/// Ordering choice before the grid is known; curve orders and the FPS sample count
/// are resolved from the grid when left unset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StrategyKind {
    #[default]
    Zyx,
    Hilbert,
    Morton,
    /// `None` samples as many patches as the grid realizes.
    Fps(Option<usize>),
}

impl std::str::FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "zyx" => Ok(StrategyKind::Zyx),
            "hilbert" => Ok(StrategyKind::Hilbert),
            "morton" => Ok(StrategyKind::Morton),
            "fps" => Ok(StrategyKind::Fps(None)),
            other => match other.strip_prefix("fps:") {
                Some(n) => n
                    .parse()
                    .map(|n| StrategyKind::Fps(Some(n)))
                    .map_err(|_| format!("bad fps sample count '{n}'")),
                None => Err(format!("unknown strategy '{other}' (zyx|hilbert|morton|fps)")),
            },
        }
    }
}

impl StrategyKind {
    pub fn resolve(&self, grid: &PatchGrid) -> OrderingStrategy {
        match *self {
            StrategyKind::Zyx => OrderingStrategy::Zyx,
            StrategyKind::Hilbert => OrderingStrategy::Hilbert {
                order: Some(curve::order_for(grid.plan.max_splits())),
            },
            StrategyKind::Morton => OrderingStrategy::Morton {
                order: Some(curve::order_for(grid.plan.max_splits())),
            },
            StrategyKind::Fps(samples) => OrderingStrategy::FpsSampling {
                samples: samples.unwrap_or(grid.len()),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenizerConfig {
    pub m: usize,
    pub k: usize,
    pub strategy: StrategyKind,
    pub separators: bool,
    pub counting: SplitCounting,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            m: DEFAULT_M,
            k: DEFAULT_K,
            strategy: StrategyKind::Zyx,
            separators: true,
            counting: SplitCounting::PerParent,
        }
    }
}

impl TokenizerConfig {
    pub fn with_mk(m: usize, k: usize) -> Self {
        Self {
            m,
            k,
            ..Self::default()
        }
    }
}

/// Everything produced on the way from a raw cloud to its token sequence.
#[derive(Debug, Clone)]
pub struct Tokenized {
    pub cloud: PointCloud,
    pub grid: PatchGrid,
    pub patches: Vec<Patch>,
    pub sequence: TokenSequence,
}

pub fn tokenize(cloud: &PointCloud, config: &TokenizerConfig) -> Result<Tokenized> {
    let cloud = cloud.normalize();
    let grid = partition::partition_with(&cloud, config.m, config.k, config.counting)?;
    let patches = patch::standardize_grid(&cloud, &grid)?;
    let strategy = config.strategy.resolve(&grid);
    let sequence = sequence::build_sequence(&cloud, &grid, &patches, strategy, config.separators)?;
    Ok(Tokenized {
        cloud,
        grid,
        patches,
        sequence,
    })
}
