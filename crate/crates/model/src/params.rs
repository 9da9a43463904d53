//! Model configuration and parameters.
//!
//! All weights live in one flat `Vec<f64>`; [`Layout`] names the tensor views into
//! it. Matrices are row-major `[in][out]`, so a row vector times the matrix is a
//! forward projection.

use std::io::{Read, Write};
use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{ModelError, Result};
use crate::vocab;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    pub max_seq: usize,
    /// Points per patch; the projector input width is `m * 6`.
    pub m: usize,
    pub seed: u64,
}

impl Default for ToyModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            vocab_size: 64,
            max_seq: 64,
            m: 8,
            seed: 0,
        }
    }
}

impl ToyModelConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [self.d_model, self.n_layers, self.n_heads, self.vocab_size, self.max_seq, self.m];
        if counts.contains(&0) {
            return Err(ModelError::Config("all counts must be >= 1".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(ModelError::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size < vocab::RESERVED + 1 {
            return Err(ModelError::Config(format!("vocab_size must be >= {}", vocab::RESERVED + 1)));
        }
        Ok(())
    }

    pub fn patch_dim(&self) -> usize {
        self.m * ptk_core::patch::CHANNELS
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn ffn_dim(&self) -> usize {
        4 * self.d_model
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerLayout {
    pub wq: Range<usize>,
    pub wk: Range<usize>,
    pub wv: Range<usize>,
    pub wo: Range<usize>,
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
}

/// Named tensor in declaration order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    /// Parameter group used in reports: projector, embeddings, attention, mlp, head.
    pub group: &'static str,
    pub range: Range<usize>,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub projector: Range<usize>,
    pub tok_emb: Range<usize>,
    pub pos_emb: Range<usize>,
    pub layers: Vec<LayerLayout>,
    pub head: Range<usize>,
    pub tensors: Vec<TensorSpec>,
    pub total: usize,
}

impl Layout {
    pub fn new(cfg: &ToyModelConfig) -> Self {
        let d = cfg.d_model;
        let f = cfg.ffn_dim();
        let mut tensors = Vec::new();
        let mut next = 0;
        let mut take = |name: String, group: &'static str, rows: usize, cols: usize| {
            let range = next..next + rows * cols;
            next = range.end;
            tensors.push(TensorSpec {
                name,
                group,
                range: range.clone(),
                rows,
                cols,
            });
            range
        };
        let projector = take("projector".into(), "projector", cfg.patch_dim(), d);
        let tok_emb = take("tok_emb".into(), "embeddings", cfg.vocab_size, d);
        let pos_emb = take("pos_emb".into(), "embeddings", cfg.max_seq, d);
        let layers = (0..cfg.n_layers)
            .map(|l| LayerLayout {
                wq: take(format!("layer{l}.wq"), "attention", d, d),
                wk: take(format!("layer{l}.wk"), "attention", d, d),
                wv: take(format!("layer{l}.wv"), "attention", d, d),
                wo: take(format!("layer{l}.wo"), "attention", d, d),
                w1: take(format!("layer{l}.w1"), "mlp", d, f),
                b1: take(format!("layer{l}.b1"), "mlp", 1, f),
                w2: take(format!("layer{l}.w2"), "mlp", f, d),
                b2: take(format!("layer{l}.b2"), "mlp", 1, d),
            })
            .collect();
        let head = take("head".into(), "head", d, cfg.vocab_size);
        Layout {
            projector,
            tok_emb,
            pos_emb,
            layers,
            head,
            tensors,
            total: next,
        }
    }
}

/// Weights of the toy model (or, with the same layout, their gradients).
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModelParams {
    pub config: ToyModelConfig,
    pub layout: Layout,
    pub data: Vec<f64>,
}

impl ToyModelParams {
    pub fn zeros(config: ToyModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let data = vec![0.0; layout.total];
        Ok(Self { config, layout, data })
    }

    /// Gaussian initialization from `config.seed`; biases start at zero.
    pub fn init(config: ToyModelConfig) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.d_model as f64;
        for spec in p.layout.tensors.clone() {
            let std = match spec.name.rsplit('.').next().unwrap_or("") {
                "projector" => 1.0 / (spec.rows as f64).sqrt(),
                "tok_emb" | "pos_emb" => 0.3,
                "b1" | "b2" => 0.0,
                "wo" | "w2" => 0.5 / (spec.rows as f64).sqrt(),
                _ => 1.0 / d.sqrt(),
            };
            if std == 0.0 {
                continue;
            }
            let normal = Normal::new(0.0, std).expect("positive std");
            for v in &mut p.data[spec.range] {
                *v = normal.sample(&mut rng);
            }
        }
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config,
            layout: self.layout.clone(),
            data: vec![0.0; self.data.len()],
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .tensors
            .iter()
            .find(|t| t.name == name)
            .map(|t| &self.data[t.range.clone()])
    }

    pub fn slice(&self, r: &Range<usize>) -> &[f64] {
        &self.data[r.clone()]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PTKC";
const CHECKPOINT_VERSION: u32 = 1;

/// Binary checkpoint: magic `PTKC`, `u32` version, the seven config fields as `u64`,
/// `u64` parameter count, then every tensor in declaration order as little-endian
/// `f64`.
pub fn write_checkpoint(params: &ToyModelParams, mut out: impl Write) -> Result<()> {
    let c = &params.config;
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    for v in [c.d_model, c.n_layers, c.n_heads, c.vocab_size, c.max_seq, c.m] {
        out.write_all(&(v as u64).to_le_bytes())?;
    }
    out.write_all(&c.seed.to_le_bytes())?;
    out.write_all(&(params.data.len() as u64).to_le_bytes())?;
    for v in &params.data {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn checkpoint_bytes(params: &ToyModelParams) -> Vec<u8> {
    let mut buf = Vec::with_capacity(4 + 4 + 64 + params.data.len() * 8);
    write_checkpoint(params, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

pub fn read_checkpoint(mut input: impl Read) -> Result<ToyModelParams> {
    let mut word = [0u8; 8];
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(ModelError::Checkpoint("bad magic".into()));
    }
    input.read_exact(&mut magic)?;
    if u32::from_le_bytes(magic) != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint("unsupported version".into()));
    }
    let mut next = || -> Result<u64> {
        input.read_exact(&mut word)?;
        Ok(u64::from_le_bytes(word))
    };
    let mut fields = [0u64; 6];
    for f in &mut fields {
        *f = next()?;
    }
    let config = ToyModelConfig {
        d_model: fields[0] as usize,
        n_layers: fields[1] as usize,
        n_heads: fields[2] as usize,
        vocab_size: fields[3] as usize,
        max_seq: fields[4] as usize,
        m: fields[5] as usize,
        seed: next()?,
    };
    let count = next()? as usize;
    let mut params = ToyModelParams::zeros(config)?;
    if count != params.data.len() {
        return Err(ModelError::Checkpoint(format!(
            "config implies {} parameters, file holds {count}",
            params.data.len()
        )));
    }
    for v in &mut params.data {
        *v = f64::from_bits(next()?);
    }
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(ModelError::Checkpoint("trailing bytes".into()));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_contiguous() {
        let cfg = ToyModelConfig::default();
        let layout = Layout::new(&cfg);
        let mut end = 0;
        for t in &layout.tensors {
            assert_eq!(t.range.start, end);
            assert_eq!(t.range.len(), t.rows * t.cols);
            end = t.range.end;
        }
        assert_eq!(end, layout.total);
        assert_eq!(layout.projector.len(), 8 * 6 * 64);
    }

    #[test]
    fn config_validation() {
        let bad = ToyModelConfig {
            n_heads: 5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let tiny_vocab = ToyModelConfig {
            vocab_size: 5,
            ..Default::default()
        };
        assert!(tiny_vocab.validate().is_err());
        assert!(ToyModelConfig::default().validate().is_ok());
    }

    #[test]
    fn init_is_seeded() {
        let a = ToyModelParams::init(ToyModelConfig::default()).unwrap();
        let b = ToyModelParams::init(ToyModelConfig::default()).unwrap();
        let c = ToyModelParams::init(ToyModelConfig {
            seed: 1,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(a, b);
        assert_ne!(a.data, c.data);
        assert!(a.is_finite());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut p = ToyModelParams::init(ToyModelConfig {
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            max_seq: 8,
            m: 2,
            vocab_size: 40,
            seed: 3,
        })
        .unwrap();
        p.data[0] = -0.0;
        p.data[1] = f64::MIN_POSITIVE / 2.0;
        let bytes = checkpoint_bytes(&p);
        let back = read_checkpoint(bytes.as_slice()).unwrap();
        assert_eq!(checkpoint_bytes(&back), bytes);
        assert_eq!(back.data[0].to_bits(), (-0.0f64).to_bits());
        assert!(read_checkpoint(&bytes[..bytes.len() - 1]).is_err());
    }
}
