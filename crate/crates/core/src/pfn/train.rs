//! Online training on freshly sampled prior curves.

use std::f64::consts::PI;
use std::sync::mpsc::sync_channel;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BinGrid, ModelConfig, ModelParams, PfnError, Result, TokenBatch, TrainConfig};
use crate::prior::PriorSampler;

const INIT_STREAM: u64 = 0;
const DATA_STREAM: u64 = 1;
const CUTOFF_STREAM: u64 = 2;

/// Batches buffered ahead of the optimizer.
const QUEUE_DEPTH: usize = 4;

/// Learning rate at 0-based `step` of `total`: linear warmup over the first
/// `warmup_fraction` of steps, then cosine decay to zero.
pub fn lr_at(step: usize, total: usize, base: f64, warmup_fraction: f64) -> f64 {
    let warmup = (warmup_fraction * total as f64).ceil() as usize;
    if step < warmup {
        return base * (step + 1) as f64 / warmup as f64;
    }
    let decay_steps = total - warmup;
    if decay_steps == 0 {
        return base;
    }
    let progress = (step - warmup) as f64 / decay_steps as f64;
    base * 0.5 * (1.0 + (PI * progress).cos())
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f32>,
    v: Vec<f32>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f32], grads: &[f32], lr: f64) {
        self.t += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let step = (lr * c2.sqrt() / c1) as f32;
        let eps = (self.eps * c2.sqrt()) as f32;
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= step * *m / (v.sqrt() + eps);
        }
    }
}

/// Raw curves of one training step with the shared cutoff.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveBatch {
    pub m: usize,
    pub n_train: usize,
    /// `batch x m` noisy values.
    pub y: Vec<f64>,
}

impl CurveBatch {
    pub fn batch(&self) -> usize {
        self.y.len() / self.m
    }

    /// Encoder inputs (raw values) and target bins (clamped values) for the
    /// steps after the cutoff.
    pub fn tokens(&self, grid: &BinGrid) -> (TokenBatch<f32>, Vec<usize>) {
        let (m, nt) = (self.m, self.n_train);
        let b = self.batch();
        let step_scaled: Vec<f32> = (1..=m).map(|t| (t as f64 / m as f64) as f32).collect();
        let mut t_scaled = Vec::with_capacity(b * m);
        let mut y = Vec::with_capacity(b * nt);
        let mut targets = Vec::with_capacity(b * (m - nt));
        for curve in self.y.chunks_exact(m) {
            t_scaled.extend_from_slice(&step_scaled);
            y.extend(curve[..nt].iter().map(|&v| v as f32));
            targets.extend(curve[nt..].iter().map(|&v| grid.bin_of(v)));
        }
        (TokenBatch { batch: b, n_train: nt, n_tokens: m, t_scaled, y }, targets)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams<f32>,
    /// Training loss of every step.
    pub losses: Vec<f64>,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn sample_curves(sampler: &PriorSampler, rng: &mut ChaCha8Rng, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n * sampler.curve_length());
    for _ in 0..n {
        out.extend(sampler.sample(rng)?.y);
    }
    Ok(out)
}

pub fn train(sampler: &PriorSampler, grid: &BinGrid, model: ModelConfig, config: TrainConfig) -> Result<TrainOutcome> {
    train_with_callback(sampler, grid, model, config, |_, _| {})
}

/// Trains from scratch, calling `on_step(step, loss)` after every update.
///
/// Curves come from a producer thread through a bounded queue; the result
/// depends only on the configs and the seed.
pub fn train_with_callback<F: FnMut(usize, f64)>(
    sampler: &PriorSampler,
    grid: &BinGrid,
    model: ModelConfig,
    config: TrainConfig,
    mut on_step: F,
) -> Result<TrainOutcome> {
    config.validate()?;
    model.validate()?;
    if grid.nbins() != model.nbins {
        return Err(PfnError::InvalidConfig(format!("grid has {} bins, model expects {}", grid.nbins(), model.nbins)));
    }
    if sampler.curve_length() != model.m {
        return Err(PfnError::InvalidConfig(format!(
            "sampler curve length {} differs from model m {}",
            sampler.curve_length(),
            model.m
        )));
    }
    let steps = config.steps();
    let (m, bs) = (model.m, config.batch_size);
    let mut params = ModelParams::<f32>::init(model, &mut stream_rng(config.seed, INIT_STREAM))?;
    let mut adam = Adam::new(params.data().len());
    let mut losses = Vec::with_capacity(steps);

    std::thread::scope(|scope| -> Result<()> {
        let (tx, rx) = sync_channel::<Result<CurveBatch>>(QUEUE_DEPTH);
        let producer = scope.spawn(move || {
            let mut data_rng = stream_rng(config.seed, DATA_STREAM);
            let mut cutoff_rng = stream_rng(config.seed, CUTOFF_STREAM);
            let materialized = if config.materialize {
                match sample_curves(sampler, &mut data_rng, config.nb_data) {
                    Ok(all) => Some(all),
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        return;
                    }
                }
            } else {
                None
            };
            for step in 0..steps {
                let y = match &materialized {
                    Some(all) => Ok(all[step * bs * m..(step + 1) * bs * m].to_vec()),
                    None => sample_curves(sampler, &mut data_rng, bs),
                };
                let n_train = cutoff_rng.random_range(0..m);
                let failed = y.is_err();
                if tx.send(y.map(|y| CurveBatch { m, n_train, y })).is_err() || failed {
                    return;
                }
            }
        });

        for step in 0..steps {
            let batch = rx.recv().map_err(|_| PfnError::InvalidConfig("batch producer stopped".into()))??;
            let (tokens, targets) = batch.tokens(grid);
            let (loss, grads) = params.loss_and_grad(&tokens, &targets)?;
            let loss = f64::from(loss);
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(PfnError::Divergence { step, loss });
            }
            adam.step(params.data_mut(), &grads, lr_at(step, steps, config.lr, config.warmup_fraction));
            losses.push(loss);
            on_step(step, loss);
            if (step + 1) % 100 == 0 || step + 1 == steps {
                info!("step {}/{steps} loss {loss:.4}", step + 1);
            }
        }
        drop(rx);
        producer.join().expect("batch producer panicked");
        Ok(())
    })?;
    Ok(TrainOutcome { params, losses })
}
