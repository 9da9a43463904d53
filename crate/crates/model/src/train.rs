//! Minibatch training with a cosine learning-rate schedule.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ModelError, Result};
use crate::model::{loss_and_grad, Example};
use crate::params::ToyModelParams;

/// Linear warmup to `peak`, then cosine decay to `floor` at the last step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub peak: f64,
    pub floor: f64,
    pub warmup: usize,
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        Self {
            peak: lr,
            floor: lr,
            warmup: 0,
        }
    }

    pub fn cosine(peak: f64) -> Self {
        Self {
            peak,
            floor: peak * 0.05,
            warmup: 0,
        }
    }

    pub fn at(&self, step: usize, total: usize) -> f64 {
        if step < self.warmup {
            return self.peak * (step + 1) as f64 / self.warmup as f64;
        }
        let span = total.saturating_sub(self.warmup).max(1);
        let progress = ((step - self.warmup) as f64 / span as f64).min(1.0);
        self.floor + 0.5 * (self.peak - self.floor) * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub steps: usize,
    /// Examples per step; the whole dataset when it is at least this large.
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub optimizer: Optimizer,
    /// Global gradient-norm clip.
    pub clip: Option<f64>,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            steps: 100,
            batch_size: 16,
            schedule: LrSchedule::cosine(3e-3),
            optimizer: Optimizer::adam(),
            clip: Some(1.0),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Batch loss before each update.
    pub losses: Vec<f64>,
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

/// Runs `opts.steps` updates and returns the trained parameters.
pub fn train(params: &ToyModelParams, dataset: &[Example], opts: &TrainOptions) -> Result<(ToyModelParams, TrainReport)> {
    let mut report = TrainReport::default();
    let mut params = params.clone();
    if opts.steps == 0 {
        return Ok((params, report));
    }
    if dataset.is_empty() || opts.batch_size == 0 {
        return Err(ModelError::InvalidArgument("training needs a non-empty dataset and batch".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut adam = AdamState {
        m: vec![0.0; params.len()],
        v: vec![0.0; params.len()],
        t: 0,
    };
    let mut batch = Vec::with_capacity(opts.batch_size);
    for step in 0..opts.steps {
        batch.clear();
        if opts.batch_size >= dataset.len() {
            batch.extend(dataset.iter().cloned());
        } else {
            let mut picks = index::sample(&mut rng, dataset.len(), opts.batch_size).into_vec();
            picks.sort_unstable();
            batch.extend(picks.into_iter().map(|i| dataset[i].clone()));
        }
        let (l, mut grads) = loss_and_grad(&params, &batch)?;
        if !l.is_finite() {
            return Err(ModelError::DivergenceDetected { step });
        }
        report.losses.push(l);

        let lr = opts.schedule.at(step, opts.steps);
        if lr == 0.0 {
            continue;
        }
        if let Some(max_norm) = opts.clip {
            let norm = grads.data.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > max_norm {
                let s = max_norm / norm;
                grads.data.iter_mut().for_each(|g| *g *= s);
            }
        }
        match opts.optimizer {
            Optimizer::Sgd => {
                for (w, g) in params.data.iter_mut().zip(&grads.data) {
                    *w -= lr * g;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                adam.t += 1;
                let c1 = 1.0 - beta1.powi(adam.t);
                let c2 = 1.0 - beta2.powi(adam.t);
                for (((w, g), m), v) in params.data.iter_mut().zip(&grads.data).zip(&mut adam.m).zip(&mut adam.v) {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
        }
        if !params.is_finite() {
            return Err(ModelError::DivergenceDetected { step });
        }
    }
    Ok((params, report))
}
