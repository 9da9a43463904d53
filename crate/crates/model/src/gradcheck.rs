//! Central finite-difference check of the hand-written backward pass.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{GradOffender, ModelError, Result};
use crate::model::{loss, loss_and_grad, Example};
use crate::params::ToyModelParams;
use crate::vocab;

pub const REL_TOL: f64 = 1e-4;
pub const ABS_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Total coordinates to probe, spread across every tensor.
    pub samples: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            samples: 240,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GroupStats {
    pub checked: usize,
    pub max_rel: f64,
    pub max_abs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub groups: BTreeMap<&'static str, GroupStats>,
}

impl GradCheckReport {
    pub fn max_rel(&self) -> f64 {
        self.groups.values().map(|g| g.max_rel).fold(0.0, f64::max)
    }
}

/// `(relative error, passes)` under the relative tolerance with an absolute floor.
pub fn compare(analytic: f64, numeric: f64) -> (f64, bool) {
    let abs = (analytic - numeric).abs();
    let scale = analytic.abs().max(numeric.abs());
    let rel = if scale == 0.0 { 0.0 } else { abs / scale };
    (rel, abs <= ABS_TOL || rel <= REL_TOL)
}

/// Picks coordinates tensor by tensor. Embedding rows that the batch never
/// touches have identically zero gradient, so only used rows are sampled there.
fn sample_coordinates(params: &ToyModelParams, batch: &[Example], opts: &GradCheckOptions) -> Vec<(usize, usize)> {
    let d = params.config.d_model;
    let mut used_ids: Vec<usize> = batch
        .iter()
        .flat_map(|ex| ex.sequence.tokens.iter().filter_map(vocab::token_id))
        .map(|id| id as usize)
        .collect();
    used_ids.sort_unstable();
    used_ids.dedup();
    let max_len = batch.iter().map(|ex| ex.sequence.tokens.len()).max().unwrap_or(0);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let tensors = &params.layout.tensors;
    let per_tensor = opts.samples.div_ceil(tensors.len()).max(1);
    let mut out = Vec::new();
    for (ti, spec) in tensors.iter().enumerate() {
        let candidates: Vec<usize> = match spec.name.as_str() {
            "tok_emb" => used_ids.iter().flat_map(|id| id * d..(id + 1) * d).collect(),
            "pos_emb" => (0..max_len * d).collect(),
            _ => (0..spec.range.len()).collect(),
        };
        let take = per_tensor.min(candidates.len());
        for i in index::sample(&mut rng, candidates.len(), take) {
            out.push((ti, spec.range.start + candidates[i]));
        }
    }
    out
}

/// Checks `analytic` against central differences of the loss.
pub fn compare_gradients(
    params: &ToyModelParams,
    batch: &[Example],
    analytic: &ToyModelParams,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    if !(1e-6..=1e-3).contains(&opts.epsilon) {
        return Err(ModelError::InvalidArgument(format!("epsilon {} outside [1e-6, 1e-3]", opts.epsilon)));
    }
    let mut probe = params.clone();
    let mut groups: BTreeMap<&'static str, GroupStats> = BTreeMap::new();
    let mut offenders = Vec::new();
    let coords = sample_coordinates(params, batch, opts);
    for &(ti, i) in &coords {
        let spec = &params.layout.tensors[ti];
        let orig = probe.data[i];
        probe.data[i] = orig + opts.epsilon;
        let plus = loss(&probe, batch)?;
        probe.data[i] = orig - opts.epsilon;
        let minus = loss(&probe, batch)?;
        probe.data[i] = orig;
        let numeric = (plus - minus) / (2.0 * opts.epsilon);
        let a = analytic.data[i];
        let (rel, ok) = compare(a, numeric);
        let g = groups.entry(spec.group).or_default();
        g.checked += 1;
        g.max_rel = g.max_rel.max(rel);
        g.max_abs = g.max_abs.max((a - numeric).abs());
        if !ok {
            offenders.push(GradOffender {
                tensor: spec.name.clone(),
                index: i - spec.range.start,
                analytic: a,
                numeric,
            });
        }
    }
    if offenders.is_empty() {
        return Ok(GradCheckReport {
            checked: coords.len(),
            groups,
        });
    }
    let worst = offenders
        .iter()
        .max_by(|a, b| compare(a.analytic, a.numeric).0.total_cmp(&compare(b.analytic, b.numeric).0))
        .map(|o| format!("{}[{}]: analytic {:e} vs numeric {:e}", o.tensor, o.index, o.analytic, o.numeric))
        .unwrap_or_default();
    Err(ModelError::GradMismatch { offenders, worst })
}

pub fn grad_check(params: &ToyModelParams, batch: &[Example], opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let (_, analytic) = loss_and_grad(params, batch)?;
    compare_gradients(params, batch, &analytic, opts)
}
