//! Prior-data fitted network: a transformer trained on synthetic prior
//! curves that maps an observed prefix to a discretized PPD per query step.

mod bins;
mod checkpoint;
mod linalg;
mod model;
mod ppd;
mod train;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prior::PriorError;

pub use bins::{build_bins, BinGrid, EDGE_SEPARATION};
pub use checkpoint::{load_checkpoint, save_checkpoint, sidecar_path, CheckpointMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use linalg::{gemm, Layout, Real};
pub use model::{cross_entropy, softmax_rows, ForwardCache, ModelConfig, ModelParams, ParamEntry, TokenBatch};
pub use ppd::DiscretePPD;
pub use train::{lr_at, train, train_with_callback, Adam, CurveBatch, TrainOutcome};

#[derive(Debug, Error)]
pub enum PfnError {
    #[error("invalid bin grid: {0}")]
    InvalidGrid(String),
    #[error("degenerate bin grid: {separated} of {edges} edges needed separation")]
    DegenerateGrid { separated: usize, edges: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("training diverged at step {step}: loss {loss}")]
    Divergence { step: usize, loss: f64 },
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Prior(#[from] PriorError),
}

pub type Result<T> = std::result::Result<T, PfnError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Total synthetic curves consumed.
    pub nb_data: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_fraction: f64,
    pub seed: u64,
    /// Pre-generate all `nb_data` curves before training instead of streaming them.
    pub materialize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { nb_data: 100_000, batch_size: 100, lr: 1e-4, warmup_fraction: 0.25, seed: 0, materialize: false }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.nb_data == 0 {
            return Err(PfnError::InvalidConfig("nb_data and batch_size must be positive".into()));
        }
        if self.nb_data % self.batch_size != 0 {
            return Err(PfnError::InvalidConfig(format!(
                "nb_data {} not divisible by batch_size {}",
                self.nb_data, self.batch_size
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(PfnError::InvalidConfig("lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(PfnError::InvalidConfig("warmup_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        self.nb_data / self.batch_size
    }
}

/// A trained network together with its output discretization.
#[derive(Debug, Clone)]
pub struct Pfn {
    params: ModelParams<f32>,
    grid: Arc<BinGrid>,
}

impl Pfn {
    pub fn new(params: ModelParams<f32>, grid: BinGrid) -> Result<Self> {
        if grid.nbins() != params.config().nbins {
            return Err(PfnError::Shape(format!(
                "grid has {} bins, model expects {}",
                grid.nbins(),
                params.config().nbins
            )));
        }
        if !params.is_finite() {
            return Err(PfnError::Shape("non-finite parameters".into()));
        }
        Ok(Self { params, grid: Arc::new(grid) })
    }

    pub fn params(&self) -> &ModelParams<f32> {
        &self.params
    }

    pub fn grid(&self) -> &Arc<BinGrid> {
        &self.grid
    }

    pub fn config(&self) -> &ModelConfig {
        self.params.config()
    }

    /// PPD at each query step given observed `(t, y)` pairs (1-based steps).
    ///
    /// Observed pairs are put in a canonical order first, so any permutation
    /// of `prefix` yields bit-identical output.
    pub fn predict(&self, prefix: &[(usize, f64)], queries: &[usize]) -> Result<Vec<DiscretePPD>> {
        let m = self.config().m;
        if prefix.len() >= m {
            return Err(PfnError::Shape(format!("prefix length {} must be below m = {m}", prefix.len())));
        }
        for &(t, y) in prefix {
            if t == 0 || t > m || !y.is_finite() {
                return Err(PfnError::Shape(format!("invalid observation ({t}, {y})")));
            }
        }
        if let Some(&q) = queries.iter().find(|&&q| q == 0 || q > m) {
            return Err(PfnError::Shape(format!("query step {q} outside 1..={m}")));
        }
        if queries.is_empty() {
            return Ok(Vec::new());
        }
        let mut observed = prefix.to_vec();
        observed.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));

        let scale = m as f64;
        let n_train = observed.len();
        let mut t_scaled: Vec<f32> = observed.iter().map(|&(t, _)| (t as f64 / scale) as f32).collect();
        t_scaled.extend(queries.iter().map(|&q| (q as f64 / scale) as f32));
        let tokens = TokenBatch {
            batch: 1,
            n_train,
            n_tokens: n_train + queries.len(),
            t_scaled,
            y: observed.iter().map(|&(_, y)| y as f32).collect(),
        };
        let logits = self.params.logits(&tokens)?;
        Ok(softmax_rows(&logits, self.config().nbins)
            .into_iter()
            .map(|probs| DiscretePPD::new(probs, Arc::clone(&self.grid)))
            .collect())
    }

    /// PPDs for steps `T+1..=m` given the first `T` values of a curve.
    pub fn predict_curve(&self, observed: &[f64]) -> Result<Vec<DiscretePPD>> {
        let prefix: Vec<(usize, f64)> = observed.iter().enumerate().map(|(i, &y)| (i + 1, y)).collect();
        let queries: Vec<usize> = (observed.len() + 1..=self.config().m).collect();
        self.predict(&prefix, &queries)
    }
}
