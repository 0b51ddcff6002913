//! Posterior sampling over curve configurations with an affine-invariant
//! ensemble sampler, and extraction of the resulting mixture PPD.
//!
//! The sampler runs in "chain coordinates": the 13 natural parameters with
//! the strictly positive ones (`pow3.alpha`, `janoschek.kappa`,
//! `janoschek.delta`, `sigma2`) replaced by their logarithms. The chain
//! target adds the log-Jacobian of that change of variables, so samples
//! mapped back to natural coordinates follow the posterior over natural
//! parameters.

mod ensemble;
mod init;
mod mixture;

use std::cell::RefCell;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prior::{self, CurveConfiguration, StepGrid, NUM_PARAMS};

pub use ensemble::{draw_stretch_z, stretch_log_accept, stretch_z_cdf, Ensemble};
pub use init::{
    bounded_least_squares, init_default, init_lse, init_map, nelder_mead, LeastSquaresFit, MAP_MAX_EVALUATIONS,
};
pub use mixture::{log_sum_exp, normal_cdf, MixturePPD};

/// Dimension of the sampled parameter vector.
pub const DIM: usize = NUM_PARAMS;

/// Chain-coordinate indices stored as logarithms.
pub const LOG_COORDS: [usize; 4] = [5, 8, 9, 12];

/// Standard deviation of the per-coordinate walker jitter around the init point.
pub const WALKER_JITTER: f64 = 1e-4;

/// Attempts per walker to find a finite start.
pub const MAX_JITTER_TRIES: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum McmcError {
    #[error("invalid chain configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid observations: {0}")]
    InvalidInput(String),
    #[error("walker {walker} found no finite starting point after {tries} tries")]
    Initialization { walker: usize, tries: usize },
}

pub type Result<T> = std::result::Result<T, McmcError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InitStrategy {
    /// Per-basis least-squares fits with weights `1/K`.
    #[default]
    Lse,
    /// Simplex maximization of the posterior from the default point.
    Map,
    /// The fixed default configuration.
    Default,
}

impl std::str::FromStr for InitStrategy {
    type Err = McmcError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lse" => Ok(Self::Lse),
            "map" => Ok(Self::Map),
            "default" => Ok(Self::Default),
            other => Err(McmcError::InvalidConfig(format!("unknown init strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub nwalkers: usize,
    /// Post-burn-in sweeps per walker.
    pub nsamples: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub stretch_scale: f64,
    pub init: InitStrategy,
    pub seed: u64,
}

impl Default for ChainConfig {
    /// The `nsamples=2000, nwalkers=100, burn-in=500, thin=1` reference setting.
    fn default() -> Self {
        Self { nwalkers: 100, nsamples: 2000, burn_in: 500, thin: 1, stretch_scale: 2.0, init: InitStrategy::Lse, seed: 0 }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nwalkers < 2 * DIM {
            return Err(McmcError::InvalidConfig(format!("nwalkers must be >= {}, got {}", 2 * DIM, self.nwalkers)));
        }
        if self.nsamples == 0 {
            return Err(McmcError::InvalidConfig("nsamples must be >= 1".into()));
        }
        if self.thin == 0 {
            return Err(McmcError::InvalidConfig("thin must be >= 1".into()));
        }
        if !(self.stretch_scale > 1.0) {
            return Err(McmcError::InvalidConfig(format!("stretch_scale must be > 1, got {}", self.stretch_scale)));
        }
        Ok(())
    }

    pub fn retained_per_walker(&self) -> usize {
        self.nsamples / self.thin
    }
}

/// Natural parameters to chain coordinates.
pub fn to_chain(xi: &CurveConfiguration) -> [f64; DIM] {
    let mut x = xi.to_array();
    for &i in &LOG_COORDS {
        x[i] = x[i].ln();
    }
    x
}

/// Chain coordinates to natural parameters.
pub fn from_chain(x: &[f64]) -> CurveConfiguration {
    let mut v = [0.0; DIM];
    v.copy_from_slice(&x[..DIM]);
    for &i in &LOG_COORDS {
        v[i] = v[i].exp();
    }
    CurveConfiguration::from_array(&v)
}

/// `log p(xi) + log p(y_1..y_T | xi)`; `-inf` outside the prior's support.
pub fn log_posterior(xi: &CurveConfiguration, y_prefix: &[f64], t_obs: usize, m: usize) -> f64 {
    assert!(t_obs >= 1 && t_obs <= y_prefix.len(), "need 1 <= T <= len(y_prefix)");
    CurvePosterior::new(&y_prefix[..t_obs], m).log_posterior(xi)
}

/// Posterior over configurations given an observed prefix, with reusable scratch space.
#[derive(Debug)]
pub struct CurvePosterior {
    y: Vec<f64>,
    grid: StepGrid,
    scratch: RefCell<Vec<f64>>,
}

impl CurvePosterior {
    /// `y` holds the observed values at steps `1..=y.len()`; `m` is the prior's curve length.
    pub fn new(y: &[f64], m: usize) -> Self {
        assert!(m >= 2 && y.len() <= m, "prefix must not exceed curve length");
        Self { y: y.to_vec(), grid: StepGrid::new(m), scratch: RefCell::new(vec![0.0; m]) }
    }

    pub fn observed(&self) -> &[f64] {
        &self.y
    }

    pub fn curve_length(&self) -> usize {
        self.grid.len()
    }

    pub fn log_posterior(&self, xi: &CurveConfiguration) -> f64 {
        let factors = xi.ln_prior_factors();
        if !factors.is_finite() {
            return f64::NEG_INFINITY;
        }
        let mut curve = self.scratch.borrow_mut();
        xi.fill_comb(&self.grid, &mut curve);
        if curve.iter().any(|v| !(0.0..=1.0).contains(v)) || !(curve[0] < curve[curve.len() - 1]) {
            return f64::NEG_INFINITY;
        }
        let var = xi.sigma2;
        let norm = -0.5 * (2.0 * std::f64::consts::PI * var).ln();
        let inv_two_var = 0.5 / var;
        let ll: f64 = self
            .y
            .iter()
            .zip(curve.iter())
            .map(|(&obs, &mu)| {
                let r = obs - mu;
                norm - r * r * inv_two_var
            })
            .sum();
        factors + ll
    }

    /// Log density in chain coordinates (includes the log-Jacobian).
    pub fn log_target(&self, x: &[f64]) -> f64 {
        if x.iter().any(|v| !v.is_finite()) {
            return f64::NEG_INFINITY;
        }
        let lp = self.log_posterior(&from_chain(x));
        if lp == f64::NEG_INFINITY {
            return lp;
        }
        lp + LOG_COORDS.iter().map(|&i| x[i]).sum::<f64>()
    }
}

/// Retained posterior samples.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorEnsemble {
    pub samples: Vec<CurveConfiguration>,
    pub acceptance_rate: f64,
}

impl PosteriorEnsemble {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// PPD at one future step.
    pub fn ppd(&self, t_query: usize) -> MixturePPD {
        ppd_from_ensemble(self, t_query)
    }

    /// Flattened natural-parameter rows as CSV, header included.
    pub fn to_csv(&self) -> String {
        let mut out = prior::PARAM_NAMES.join(",");
        out.push('\n');
        for s in &self.samples {
            let row: Vec<String> = s.to_array().iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Picks the starting point for the walkers.
pub fn initial_point(y_prefix: &[f64], t_obs: usize, m: usize, strategy: InitStrategy) -> CurveConfiguration {
    match strategy {
        InitStrategy::Default => init_default(m),
        InitStrategy::Lse if t_obs >= 2 => init_lse(y_prefix, t_obs, m),
        InitStrategy::Map if t_obs >= 2 => init_map(y_prefix, t_obs, m),
        // Fitting needs at least two observations.
        _ => init_default(m),
    }
}

/// Runs the ensemble sampler on the posterior given the first `t_obs`
/// observations and returns the thinned post-burn-in samples.
pub fn run_sampler(y_prefix: &[f64], t_obs: usize, m: usize, config: &ChainConfig) -> Result<PosteriorEnsemble> {
    config.validate()?;
    if t_obs == 0 || t_obs > y_prefix.len() || t_obs > m {
        return Err(McmcError::InvalidInput(format!(
            "need 1 <= T <= min(len(y), m), got T={t_obs}, len={}, m={m}",
            y_prefix.len()
        )));
    }
    if y_prefix[..t_obs].iter().any(|v| !v.is_finite()) {
        return Err(McmcError::InvalidInput("observations must be finite".into()));
    }
    let posterior = CurvePosterior::new(&y_prefix[..t_obs], m);
    let target = |x: &[f64]| posterior.log_target(x);
    let start = to_chain(&initial_point(y_prefix, t_obs, m, config.init));

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut ens = Ensemble::around(&mut rng, &start, config.nwalkers, WALKER_JITTER, MAX_JITTER_TRIES, target)
        .ok_or(McmcError::Initialization { walker: 0, tries: MAX_JITTER_TRIES })?;

    for _ in 0..config.burn_in {
        ens.sweep(&mut rng, config.stretch_scale, target);
    }
    let mut accepted = 0usize;
    let mut samples = Vec::with_capacity(config.nwalkers * config.retained_per_walker());
    for i in 0..config.nsamples {
        accepted += ens.sweep(&mut rng, config.stretch_scale, target);
        if (i + 1) % config.thin == 0 {
            samples.extend(ens.positions().chunks_exact(DIM).map(from_chain));
        }
    }
    let acceptance_rate = accepted as f64 / (config.nsamples * config.nwalkers) as f64;
    Ok(PosteriorEnsemble { samples, acceptance_rate })
}

/// Mixture PPD at `t_query`: one `Normal(f_comb(t_query | xi_s), sigma2_s)` per sample.
pub fn ppd_from_ensemble(ensemble: &PosteriorEnsemble, t_query: usize) -> MixturePPD {
    assert!(t_query >= 1, "query step must be >= 1");
    let means = ensemble.samples.iter().map(|s| s.comb_unchecked(t_query)).collect();
    let variances = ensemble.samples.iter().map(|s| s.sigma2).collect();
    MixturePPD::new(means, variances)
}
