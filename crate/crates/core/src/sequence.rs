//! Token sequences: patch ordering, the layer/row separator grammar, and the
//! on-disk token text plus matrix sidecar.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::cloud::PointCloud;
use crate::curve::{hilbert_rank, morton_rank};
use crate::error::{Error, Result};
use crate::partition::{CellIndex, PatchGrid};
use crate::patch::{fps, nearest_to_centroid, standardize, Patch, CHANNELS};

pub const MATRIX_MAGIC: &[u8; 4] = b"PTKM";
pub const MATRIX_HEADER_LEN: usize = 16;
const TOKENS_HEADER: &str = "# ptk-tokens v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Token {
    PcStart,
    PcEnd,
    /// Row `slot` of the patch matrix.
    Patch(usize),
    LayerSep,
    RowSep,
    /// Opaque text token id.
    Text(u32),
}

impl Token {
    pub fn is_separator(&self) -> bool {
        matches!(self, Token::LayerSep | Token::RowSep)
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::PcStart => f.write_str("PCSTART"),
            Token::PcEnd => f.write_str("PCEND"),
            Token::Patch(slot) => write!(f, "PATCH {slot}"),
            Token::LayerSep => f.write_str("LSEP"),
            Token::RowSep => f.write_str("RSEP"),
            Token::Text(id) => write!(f, "TEXT {id}"),
        }
    }
}

impl FromStr for Token {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split_ascii_whitespace().collect();
        let number = |v: &str| v.parse().map_err(|_| format!("bad number '{v}'"));
        match parts.as_slice() {
            ["PCSTART"] => Ok(Token::PcStart),
            ["PCEND"] => Ok(Token::PcEnd),
            ["LSEP"] => Ok(Token::LayerSep),
            ["RSEP"] => Ok(Token::RowSep),
            ["PATCH", slot] => Ok(Token::Patch(number(slot)?)),
            ["TEXT", id] => Ok(Token::Text(number(id)? as u32)),
            _ => Err(format!("unknown token line '{s}'")),
        }
    }
}

/// How realized patches are ordered in the sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderingStrategy {
    /// Lexicographic (z, y, x), optionally with layer/row separators.
    Zyx,
    Hilbert { order: Option<u32> },
    Morton { order: Option<u32> },
    /// Grid-free baseline: `samples` centers by global FPS, each patch being the
    /// center's `m` nearest points, emitted in selection order.
    FpsSampling { samples: usize },
}

impl OrderingStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            OrderingStrategy::Zyx => "zyx",
            OrderingStrategy::Hilbert { .. } => "hilbert",
            OrderingStrategy::Morton { .. } => "morton",
            OrderingStrategy::FpsSampling { .. } => "fps",
        }
    }
}

impl fmt::Display for OrderingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OrderingStrategy::Zyx => f.write_str("zyx"),
            OrderingStrategy::Hilbert { order: Some(o) } => write!(f, "hilbert:{o}"),
            OrderingStrategy::Morton { order: Some(o) } => write!(f, "morton:{o}"),
            OrderingStrategy::Hilbert { order: None } => f.write_str("hilbert"),
            OrderingStrategy::Morton { order: None } => f.write_str("morton"),
            OrderingStrategy::FpsSampling { samples } => write!(f, "fps:{samples}"),
        }
    }
}

impl FromStr for OrderingStrategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let arg_num = |a: Option<&str>| -> std::result::Result<Option<u64>, String> {
            a.map(|v| v.parse::<u64>().map_err(|_| format!("bad strategy parameter '{v}'")))
                .transpose()
        };
        match name {
            "zyx" if arg.is_none() => Ok(OrderingStrategy::Zyx),
            "hilbert" => Ok(OrderingStrategy::Hilbert {
                order: arg_num(arg)?.map(|o| o as u32),
            }),
            "morton" => Ok(OrderingStrategy::Morton {
                order: arg_num(arg)?.map(|o| o as u32),
            }),
            "fps" => Ok(OrderingStrategy::FpsSampling {
                samples: arg_num(arg)?.ok_or("fps needs a sample count, e.g. fps:32")? as usize,
            }),
            _ => Err(format!("unknown ordering strategy '{s}'")),
        }
    }
}

/// A token stream paired with the matrix of flattened patches it references.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub tokens: Vec<Token>,
    /// Row-major, `patch_count() x patch_dim`.
    pub patch_matrix: Vec<f64>,
    pub patch_dim: usize,
    pub ordering: OrderingStrategy,
    pub separators: bool,
}

impl TokenSequence {
    pub fn patch_count(&self) -> usize {
        if self.patch_dim == 0 {
            0
        } else {
            self.patch_matrix.len() / self.patch_dim
        }
    }

    pub fn patch_row(&self, slot: usize) -> &[f64] {
        &self.patch_matrix[slot * self.patch_dim..(slot + 1) * self.patch_dim]
    }

    pub fn stats(&self) -> SequenceStats {
        SequenceStats::count(&self.tokens)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SequenceStats {
    pub patches: usize,
    pub layer_seps: usize,
    pub row_seps: usize,
    pub text: usize,
    pub total: usize,
}

impl SequenceStats {
    pub fn count(tokens: &[Token]) -> Self {
        let mut s = SequenceStats {
            total: tokens.len(),
            ..Default::default()
        };
        for t in tokens {
            match t {
                Token::Patch(_) => s.patches += 1,
                Token::LayerSep => s.layer_seps += 1,
                Token::RowSep => s.row_seps += 1,
                Token::Text(_) => s.text += 1,
                Token::PcStart | Token::PcEnd => {}
            }
        }
        s
    }
}

fn grid_tokens(order: &[CellIndex], separators: bool) -> Vec<Token> {
    let mut tokens = Vec::with_capacity(order.len() * 2 + 2);
    tokens.push(Token::PcStart);
    for (slot, cell) in order.iter().enumerate() {
        if separators && slot > 0 {
            let prev = order[slot - 1];
            if prev.z != cell.z {
                tokens.push(Token::LayerSep);
            } else if prev.y != cell.y {
                tokens.push(Token::RowSep);
            }
        }
        tokens.push(Token::Patch(slot));
    }
    tokens.push(Token::PcEnd);
    tokens
}

fn matrix_of<'a>(patches: impl IntoIterator<Item = &'a Patch>) -> Vec<f64> {
    patches.into_iter().flat_map(|p| p.flatten()).collect()
}

/// Orders `patches` (one per realized cell of `grid`) by `strategy` and emits the
/// point-cloud token envelope. Separators appear only for [`OrderingStrategy::Zyx`]
/// with `separators` set: `LayerSep` where z changes between consecutive patches,
/// otherwise `RowSep` where y changes.
pub fn build_sequence(
    cloud: &PointCloud,
    grid: &PatchGrid,
    patches: &[Patch],
    strategy: OrderingStrategy,
    separators: bool,
) -> Result<TokenSequence> {
    let m = grid.plan.m;
    let patch_dim = m * CHANNELS;

    if let OrderingStrategy::FpsSampling { samples } = strategy {
        let selected = fps_patches(cloud, grid, samples)?;
        return Ok(TokenSequence {
            tokens: std::iter::once(Token::PcStart)
                .chain((0..selected.len()).map(Token::Patch))
                .chain(std::iter::once(Token::PcEnd))
                .collect(),
            patch_matrix: matrix_of(&selected),
            patch_dim,
            ordering: strategy,
            separators: false,
        });
    }

    if patches.len() != grid.len()
        || patches.iter().zip(grid.cells.keys()).any(|(p, c)| p.index != *c)
        || patches.iter().any(|p| p.len() != m)
    {
        return Err(Error::InvalidParameter(
            "patches do not match the grid's realized cells".into(),
        ));
    }
    if patches.is_empty() {
        return Err(Error::InvalidParameter("grid has no patches".into()));
    }

    let mut ordered: Vec<&Patch> = patches.iter().collect();
    let (emit, tag) = match strategy {
        OrderingStrategy::Zyx => {
            ordered.sort_by_key(|p| p.index);
            (separators, strategy)
        }
        OrderingStrategy::Hilbert { order } | OrderingStrategy::Morton { order } => {
            let order = order.ok_or(Error::StrategyParamMissing(strategy.name()))?;
            let rank = match strategy {
                OrderingStrategy::Hilbert { .. } => hilbert_rank,
                _ => morton_rank,
            };
            let mut keyed = ordered
                .iter()
                .map(|p| rank(p.index, order).map(|r| (r, *p)))
                .collect::<Result<Vec<_>>>()?;
            keyed.sort_by_key(|(r, _)| *r);
            ordered = keyed.into_iter().map(|(_, p)| p).collect();
            (false, strategy)
        }
        OrderingStrategy::FpsSampling { .. } => unreachable!("handled above"),
    };

    let cells: Vec<CellIndex> = ordered.iter().map(|p| p.index).collect();
    Ok(TokenSequence {
        tokens: grid_tokens(&cells, emit),
        patch_matrix: matrix_of(ordered.iter().copied()),
        patch_dim,
        ordering: tag,
        separators: emit,
    })
}

fn fps_patches(cloud: &PointCloud, grid: &PatchGrid, samples: usize) -> Result<Vec<Patch>> {
    if samples == 0 {
        return Err(Error::InvalidParameter("fps sampling needs at least one sample".into()));
    }
    let m = grid.plan.m;
    let points = cloud.points();
    let xyz: Vec<[f64; 3]> = points.iter().map(|p| p.xyz).collect();
    let seed = nearest_to_centroid(&xyz).expect("point cloud is never empty");
    let centers = fps(&xyz, samples.min(xyz.len()), seed)?;

    centers
        .into_iter()
        .map(|c| {
            let mut by_dist: Vec<(f64, usize)> = xyz
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let d: f64 = (0..3).map(|a| (p[a] - xyz[c][a]).powi(2)).sum();
                    (d, i)
                })
                .collect();
            by_dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let members: Vec<usize> = by_dist.into_iter().take(m).map(|(_, i)| i).collect();
            let index = grid.locate(xyz[c])?;
            standardize(points, &members, index, m)
        })
        .collect()
}

/// Checks the point-cloud envelope of a token stream.
///
/// Rules: exactly one `PcStart` ... `PcEnd` pair, only patches and separators inside,
/// patch slots numbered 0, 1, 2, ... in order, and separators only between two
/// patches (never first, last, or doubled). With `separators_allowed` false any
/// separator is a violation. Text tokens may appear outside the envelope.
pub fn validate(tokens: &[Token], separators_allowed: bool) -> Result<SequenceStats> {
    let bad = |msg: String| Err(Error::Grammar(msg));
    let Some(start) = tokens.iter().position(|t| *t == Token::PcStart) else {
        return bad("missing PCSTART".into());
    };
    if tokens[..start].iter().any(|t| !matches!(t, Token::Text(_))) {
        return bad("non-text token before PCSTART".into());
    }
    let Some(len) = tokens[start + 1..].iter().position(|t| *t == Token::PcEnd) else {
        return bad("missing PCEND".into());
    };
    let end = start + 1 + len;
    if tokens[end + 1..].iter().any(|t| !matches!(t, Token::Text(_))) {
        return bad("non-text token after PCEND".into());
    }

    let body = &tokens[start + 1..end];
    let mut next_slot = 0;
    let mut prev: Option<Token> = None;
    for (i, t) in body.iter().enumerate() {
        match t {
            Token::Patch(slot) => {
                if *slot != next_slot {
                    return bad(format!("patch slot {slot} where {next_slot} expected"));
                }
                next_slot += 1;
            }
            Token::LayerSep | Token::RowSep => {
                if !separators_allowed {
                    return bad(format!("separator at position {} in a sequence without separators", start + 1 + i));
                }
                match prev {
                    None => return bad("separator directly after PCSTART".into()),
                    Some(p) if p.is_separator() => return bad("consecutive separators".into()),
                    _ => {}
                }
            }
            other => return bad(format!("{other} inside the point-cloud envelope")),
        }
        prev = Some(*t);
    }
    match prev {
        None => return bad("point-cloud envelope holds no patches".into()),
        Some(p) if p.is_separator() => return bad("trailing separator before PCEND".into()),
        _ => {}
    }
    Ok(SequenceStats::count(tokens))
}

/// Sidecar path paired with a token file: same name with the extension `ptkm`.
pub fn sidecar_path(tokens_path: &Path) -> PathBuf {
    tokens_path.with_extension("ptkm")
}

/// Writes `bytes` to `path` via a temporary file in the same directory and a rename,
/// so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| {
        Error::io(path, io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))
    })?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

pub fn encode_tokens(seq: &TokenSequence) -> String {
    let mut out = String::new();
    out.push_str(TOKENS_HEADER);
    out.push('\n');
    out.push_str(&format!(
        "# ordering={} separators={} rows={} cols={}\n",
        seq.ordering,
        u8::from(seq.separators),
        seq.patch_count(),
        seq.patch_dim
    ));
    for t in &seq.tokens {
        out.push_str(&t.to_string());
        out.push('\n');
    }
    out
}

pub fn encode_matrix(seq: &TokenSequence) -> Vec<u8> {
    let rows = seq.patch_count() as u32;
    let cols = seq.patch_dim as u32;
    let mut out = Vec::with_capacity(MATRIX_HEADER_LEN + seq.patch_matrix.len() * 8);
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for v in &seq.patch_matrix {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Writes the token text to `path` and the patch matrix to [`sidecar_path`].
pub fn export(seq: &TokenSequence, path: &Path) -> Result<()> {
    if seq.patch_count() == 0 {
        return Err(Error::io(
            path,
            io::Error::new(io::ErrorKind::InvalidInput, "refusing to export a sequence with no patches"),
        ));
    }
    // Matrix first: a token file on disk always has its sidecar next to it.
    write_atomic(&sidecar_path(path), &encode_matrix(seq))?;
    write_atomic(path, encode_tokens(seq).as_bytes())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenFile {
    pub tokens: Vec<Token>,
    pub ordering: Option<OrderingStrategy>,
    pub separators: Option<bool>,
}

pub fn parse_tokens(text: &str) -> Result<TokenFile> {
    let mut file = TokenFile {
        tokens: Vec::new(),
        ordering: None,
        separators: None,
    };
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            for pair in meta.split_ascii_whitespace() {
                match pair.split_once('=') {
                    Some(("ordering", v)) => {
                        file.ordering = Some(v.parse().map_err(|e: String| Error::parse(i + 1, e))?)
                    }
                    Some(("separators", v)) => file.separators = Some(v == "1"),
                    _ => {}
                }
            }
            continue;
        }
        file.tokens.push(line.parse().map_err(|e: String| Error::parse(i + 1, e))?);
    }
    Ok(file)
}

/// Decodes a matrix sidecar into `(rows, cols, values)`. A size that disagrees with
/// the header is reported as an I/O error (truncated or padded file).
pub fn decode_matrix(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let invalid = |msg: String| Error::io(path, io::Error::new(io::ErrorKind::InvalidData, msg));
    if bytes.len() < MATRIX_HEADER_LEN || &bytes[..4] != MATRIX_MAGIC {
        return Err(invalid("missing PTKM header".into()));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let (rows, cols) = (word(4), word(8));
    let expected = MATRIX_HEADER_LEN + rows * cols * 8;
    if bytes.len() != expected {
        return Err(invalid(format!("matrix file is {} bytes, header implies {expected}", bytes.len())));
    }
    let values = bytes[MATRIX_HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((rows, cols, values))
}

/// Reads a token file and its sidecar back into a sequence.
pub fn import(path: &Path) -> Result<TokenSequence> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file = parse_tokens(&text)?;
    let side = sidecar_path(path);
    let bytes = fs::read(&side).map_err(|e| Error::io(&side, e))?;
    let (rows, cols, patch_matrix) = decode_matrix(&bytes, &side)?;
    let patches = SequenceStats::count(&file.tokens).patches;
    if patches != rows {
        return Err(Error::io(
            &side,
            io::Error::new(
                io::ErrorKind::InvalidData,
                format!("{patches} patch tokens but {rows} matrix rows"),
            ),
        ));
    }
    Ok(TokenSequence {
        tokens: file.tokens,
        patch_matrix,
        patch_dim: cols,
        ordering: file.ordering.unwrap_or(OrderingStrategy::Zyx),
        separators: file.separators.unwrap_or(true),
    })
}
