//! Parametric learning-curve prior.
//!
//! A curve is a weighted sum of three growth families (pow3, Janoschek and
//! ilog2) observed under i.i.d. Gaussian noise. The prior over the 13 latent
//! parameters is a product of independent uniform and log-normal factors,
//! truncated to curves that stay inside `[0, 1]` on every integer step
//! `1..=m` and end strictly higher than they start.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of basis curves in the combination.
pub const NUM_BASIS: usize = 3;

/// Number of latent parameters in a [`CurveConfiguration`].
pub const NUM_PARAMS: usize = 13;

/// Default curve length the prior is defined over.
pub const DEFAULT_CURVE_LENGTH: usize = 100;

/// Default rejection budget for [`sample_configuration`].
pub const DEFAULT_MAX_REJECTS: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PriorError {
    #[error("parameter out of domain: {0}")]
    Domain(String),
    #[error("step index must be >= 1, got {0}")]
    InvalidStep(usize),
    #[error("no valid configuration after {0} rejected draws")]
    RejectionBudgetExhausted(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, PriorError>;

/// Closed interval support of a uniform prior factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformPrior {
    pub low: f64,
    pub high: f64,
}

impl UniformPrior {
    pub const fn new(low: f64, high: f64) -> Self {
        Self { low, high }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.low && x <= self.high
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if self.contains(x) {
            -(self.high - self.low).ln()
        } else {
            f64::NEG_INFINITY
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.low + (self.high - self.low) * rng.random::<f64>()
    }
}

/// Log-normal factor: `ln x ~ Normal(mean, variance)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogNormalPrior {
    pub mean: f64,
    pub variance: f64,
}

impl LogNormalPrior {
    pub const fn new(mean: f64, variance: f64) -> Self {
        Self { mean, variance }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    /// Normal log-density of `ln x`, i.e. the density in log coordinates.
    pub fn ln_pdf_log_space(&self, log_x: f64) -> f64 {
        let z = log_x - self.mean;
        -0.5 * (2.0 * PI * self.variance).ln() - z * z / (2.0 * self.variance)
    }

    /// Log-normal log-density of `x` itself.
    pub fn ln_pdf(&self, x: f64) -> f64 {
        if !(x > 0.0) || !x.is_finite() {
            return f64::NEG_INFINITY;
        }
        let log_x = x.ln();
        self.ln_pdf_log_space(log_x) - log_x
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        (self.mean + self.std_dev() * z).exp()
    }
}

pub const WEIGHT_PRIOR: UniformPrior = UniformPrior::new(0.0, 1.0);
pub const POW3_C_PRIOR: UniformPrior = UniformPrior::new(0.0, 1.25);
pub const POW3_A_PRIOR: UniformPrior = UniformPrior::new(-0.6, 0.6);
pub const POW3_ALPHA_PRIOR: LogNormalPrior = LogNormalPrior::new(0.0, 4.0);
pub const JANOSCHEK_ALPHA_PRIOR: UniformPrior = UniformPrior::new(0.0, 1.0);
pub const JANOSCHEK_BETA_PRIOR: UniformPrior = UniformPrior::new(0.0, 2.0);
pub const JANOSCHEK_KAPPA_PRIOR: LogNormalPrior = LogNormalPrior::new(-2.0, 1.0);
pub const JANOSCHEK_DELTA_PRIOR: LogNormalPrior = LogNormalPrior::new(0.0, 0.25);
pub const ILOG2_C_PRIOR: UniformPrior = UniformPrior::new(0.0, 1.0);
pub const ILOG2_A_PRIOR: UniformPrior = UniformPrior::new(-0.5, 0.5);
pub const SIGMA2_PRIOR: LogNormalPrior = LogNormalPrior::new(-8.0, 2.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisKind {
    Pow3,
    Janoschek,
    Ilog2,
}

impl BasisKind {
    pub const ALL: [BasisKind; NUM_BASIS] = [BasisKind::Pow3, BasisKind::Janoschek, BasisKind::Ilog2];
}

/// `c - a * t^(-alpha)`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pow3Params {
    pub c: f64,
    pub a: f64,
    pub alpha: f64,
}

/// `alpha - (alpha - beta) * exp(-kappa * t^delta)`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JanoschekParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
    pub delta: f64,
}

/// `c - a / ln(t + 1)`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ilog2Params {
    pub c: f64,
    pub a: f64,
}

impl Pow3Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.c.is_finite() && self.a.is_finite()) {
            return Err(PriorError::Domain("pow3 c and a must be finite".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(PriorError::Domain(format!("pow3 alpha must be > 0, got {}", self.alpha)));
        }
        Ok(())
    }

    #[inline]
    fn value_ln_t(&self, ln_t: f64) -> f64 {
        self.c - self.a * (-self.alpha * ln_t).exp()
    }

    pub fn eval(&self, t: usize) -> Result<f64> {
        check_step(t)?;
        self.validate()?;
        Ok(self.value_ln_t((t as f64).ln()))
    }

    fn ln_prior(&self) -> f64 {
        POW3_C_PRIOR.ln_pdf(self.c) + POW3_A_PRIOR.ln_pdf(self.a) + POW3_ALPHA_PRIOR.ln_pdf(self.alpha)
    }
}

impl JanoschekParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.beta.is_finite()) {
            return Err(PriorError::Domain("janoschek alpha and beta must be finite".into()));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(PriorError::Domain(format!("janoschek kappa must be > 0, got {}", self.kappa)));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(PriorError::Domain(format!("janoschek delta must be > 0, got {}", self.delta)));
        }
        Ok(())
    }

    #[inline]
    fn value_ln_t(&self, ln_t: f64) -> f64 {
        let t_delta = (self.delta * ln_t).exp();
        self.alpha - (self.alpha - self.beta) * (-self.kappa * t_delta).exp()
    }

    pub fn eval(&self, t: usize) -> Result<f64> {
        check_step(t)?;
        self.validate()?;
        Ok(self.value_ln_t((t as f64).ln()))
    }

    fn ln_prior(&self) -> f64 {
        JANOSCHEK_ALPHA_PRIOR.ln_pdf(self.alpha)
            + JANOSCHEK_BETA_PRIOR.ln_pdf(self.beta)
            + JANOSCHEK_KAPPA_PRIOR.ln_pdf(self.kappa)
            + JANOSCHEK_DELTA_PRIOR.ln_pdf(self.delta)
    }
}

impl Ilog2Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.c.is_finite() && self.a.is_finite()) {
            return Err(PriorError::Domain("ilog2 c and a must be finite".into()));
        }
        Ok(())
    }

    #[inline]
    fn value_inv_ln(&self, inv_ln_t1: f64) -> f64 {
        self.c - self.a * inv_ln_t1
    }

    pub fn eval(&self, t: usize) -> Result<f64> {
        check_step(t)?;
        self.validate()?;
        Ok(self.value_inv_ln(1.0 / ((t + 1) as f64).ln()))
    }

    fn ln_prior(&self) -> f64 {
        ILOG2_C_PRIOR.ln_pdf(self.c) + ILOG2_A_PRIOR.ln_pdf(self.a)
    }
}

/// Parameters of one basis curve, tagged with its family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BasisParams {
    Pow3(Pow3Params),
    Janoschek(JanoschekParams),
    Ilog2(Ilog2Params),
}

impl BasisParams {
    pub fn kind(&self) -> BasisKind {
        match self {
            BasisParams::Pow3(_) => BasisKind::Pow3,
            BasisParams::Janoschek(_) => BasisKind::Janoschek,
            BasisParams::Ilog2(_) => BasisKind::Ilog2,
        }
    }
}

/// Evaluates a single basis curve at step `t >= 1`.
pub fn eval_basis(params: &BasisParams, t: usize) -> Result<f64> {
    match params {
        BasisParams::Pow3(p) => p.eval(t),
        BasisParams::Janoschek(p) => p.eval(t),
        BasisParams::Ilog2(p) => p.eval(t),
    }
}

fn check_step(t: usize) -> Result<()> {
    if t == 0 {
        Err(PriorError::InvalidStep(t))
    } else {
        Ok(())
    }
}

/// Precomputed step-dependent terms for `t = 1..=m`, so that evaluating a
/// configuration on the whole grid costs only the parameter-dependent
/// exponentials.
#[derive(Debug, Clone)]
pub struct StepGrid {
    ln_t: Vec<f64>,
    inv_ln_t1: Vec<f64>,
}

impl StepGrid {
    pub fn new(m: usize) -> Self {
        let ln_t = (1..=m).map(|t| (t as f64).ln()).collect();
        let inv_ln_t1 = (1..=m).map(|t| 1.0 / ((t + 1) as f64).ln()).collect();
        Self { ln_t, inv_ln_t1 }
    }

    pub fn len(&self) -> usize {
        self.ln_t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ln_t.is_empty()
    }
}

/// The 13 latent parameters of the curve prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveConfiguration {
    pub weights: [f64; NUM_BASIS],
    pub pow3: Pow3Params,
    pub janoschek: JanoschekParams,
    pub ilog2: Ilog2Params,
    pub sigma2: f64,
}

/// Names of the flattened parameters, in [`CurveConfiguration::to_array`] order.
pub const PARAM_NAMES: [&str; NUM_PARAMS] = [
    "w_pow3",
    "w_janoschek",
    "w_ilog2",
    "pow3_c",
    "pow3_a",
    "pow3_alpha",
    "janoschek_alpha",
    "janoschek_beta",
    "janoschek_kappa",
    "janoschek_delta",
    "ilog2_c",
    "ilog2_a",
    "sigma2",
];

impl CurveConfiguration {
    pub fn to_array(&self) -> [f64; NUM_PARAMS] {
        [
            self.weights[0],
            self.weights[1],
            self.weights[2],
            self.pow3.c,
            self.pow3.a,
            self.pow3.alpha,
            self.janoschek.alpha,
            self.janoschek.beta,
            self.janoschek.kappa,
            self.janoschek.delta,
            self.ilog2.c,
            self.ilog2.a,
            self.sigma2,
        ]
    }

    pub fn from_array(v: &[f64; NUM_PARAMS]) -> Self {
        Self {
            weights: [v[0], v[1], v[2]],
            pow3: Pow3Params { c: v[3], a: v[4], alpha: v[5] },
            janoschek: JanoschekParams { alpha: v[6], beta: v[7], kappa: v[8], delta: v[9] },
            ilog2: Ilog2Params { c: v[10], a: v[11] },
            sigma2: v[12],
        }
    }

    pub fn basis(&self, kind: BasisKind) -> BasisParams {
        match kind {
            BasisKind::Pow3 => BasisParams::Pow3(self.pow3),
            BasisKind::Janoschek => BasisParams::Janoschek(self.janoschek),
            BasisKind::Ilog2 => BasisParams::Ilog2(self.ilog2),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pow3.validate()?;
        self.janoschek.validate()?;
        self.ilog2.validate()?;
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(PriorError::Domain("weights must be finite".into()));
        }
        Ok(())
    }

    #[inline]
    fn comb_from_terms(&self, ln_t: f64, inv_ln_t1: f64) -> f64 {
        self.weights[0] * self.pow3.value_ln_t(ln_t)
            + self.weights[1] * self.janoschek.value_ln_t(ln_t)
            + self.weights[2] * self.ilog2.value_inv_ln(inv_ln_t1)
    }

    /// Noise-free curve value `f_comb(t)` at step `t >= 1`.
    pub fn eval_comb(&self, t: usize) -> Result<f64> {
        check_step(t)?;
        self.validate()?;
        Ok(self.comb_from_terms((t as f64).ln(), 1.0 / ((t + 1) as f64).ln()))
    }

    /// Unchecked `f_comb(t)`; garbage in, garbage out.
    #[inline]
    pub fn comb_unchecked(&self, t: usize) -> f64 {
        self.comb_from_terms((t as f64).ln(), 1.0 / ((t + 1) as f64).ln())
    }

    /// Writes `f_comb(1..=grid.len())` into `out`.
    pub fn fill_comb(&self, grid: &StepGrid, out: &mut [f64]) {
        for ((o, &l), &il) in out.iter_mut().zip(&grid.ln_t).zip(&grid.inv_ln_t1) {
            *o = self.comb_from_terms(l, il);
        }
    }

    /// `f_comb(1..=m)` as a vector.
    pub fn curve(&self, m: usize) -> Vec<f64> {
        let grid = StepGrid::new(m);
        let mut out = vec![0.0; m];
        self.fill_comb(&grid, &mut out);
        out
    }

    /// Sum of the independent factor log-densities, ignoring the curve
    /// constraints. `-inf` outside any factor's support.
    pub fn ln_prior_factors(&self) -> f64 {
        let w: f64 = self.weights.iter().map(|&w| WEIGHT_PRIOR.ln_pdf(w)).sum();
        w + self.pow3.ln_prior() + self.janoschek.ln_prior() + self.ilog2.ln_prior() + SIGMA2_PRIOR.ln_pdf(self.sigma2)
    }

    /// Whether the noise-free curve lies in `[0, 1]` on `1..=m` and ends
    /// strictly above where it starts.
    pub fn satisfies_curve_constraints(&self, grid: &StepGrid) -> bool {
        let m = grid.len();
        if m < 2 {
            return false;
        }
        let mut first = f64::NAN;
        let mut last = f64::NAN;
        for (i, (&l, &il)) in grid.ln_t.iter().zip(&grid.inv_ln_t1).enumerate() {
            let v = self.comb_from_terms(l, il);
            // NaN fails both comparisons and is rejected here.
            if !(0.0..=1.0).contains(&v) {
                return false;
            }
            if i == 0 {
                first = v;
            }
            last = v;
        }
        first < last
    }
}

/// Log prior density (up to the truncation normalizer) of a configuration.
///
/// Returns `-inf` when any factor is out of support or the curve violates
/// the `[0, 1]` / strictly-increasing-endpoint constraints on `1..=m`.
pub fn log_prior_density(xi: &CurveConfiguration, m: usize) -> f64 {
    log_prior_density_on(xi, &StepGrid::new(m))
}

/// [`log_prior_density`] with a precomputed grid.
pub fn log_prior_density_on(xi: &CurveConfiguration, grid: &StepGrid) -> f64 {
    let factors = xi.ln_prior_factors();
    if !factors.is_finite() {
        return f64::NEG_INFINITY;
    }
    if !xi.satisfies_curve_constraints(grid) {
        return f64::NEG_INFINITY;
    }
    factors
}

/// Draws every factor independently, without the curve constraints.
pub fn sample_unconstrained<R: Rng + ?Sized>(rng: &mut R) -> CurveConfiguration {
    let weights = [WEIGHT_PRIOR.sample(rng), WEIGHT_PRIOR.sample(rng), WEIGHT_PRIOR.sample(rng)];
    let pow3 = Pow3Params {
        c: POW3_C_PRIOR.sample(rng),
        a: POW3_A_PRIOR.sample(rng),
        alpha: POW3_ALPHA_PRIOR.sample(rng),
    };
    let janoschek = JanoschekParams {
        alpha: JANOSCHEK_ALPHA_PRIOR.sample(rng),
        beta: JANOSCHEK_BETA_PRIOR.sample(rng),
        kappa: JANOSCHEK_KAPPA_PRIOR.sample(rng),
        delta: JANOSCHEK_DELTA_PRIOR.sample(rng),
    };
    let ilog2 = Ilog2Params {
        c: ILOG2_C_PRIOR.sample(rng),
        a: ILOG2_A_PRIOR.sample(rng),
    };
    let sigma2 = SIGMA2_PRIOR.sample(rng);
    CurveConfiguration { weights, pow3, janoschek, ilog2, sigma2 }
}

/// Rejection-samples a configuration satisfying all prior constraints on `1..=m`.
pub fn sample_configuration<R: Rng + ?Sized>(rng: &mut R, m: usize, max_rejects: usize) -> Result<CurveConfiguration> {
    sample_configuration_on(rng, &StepGrid::new(m), max_rejects)
}

pub fn sample_configuration_on<R: Rng + ?Sized>(
    rng: &mut R,
    grid: &StepGrid,
    max_rejects: usize,
) -> Result<CurveConfiguration> {
    if max_rejects == 0 {
        return Err(PriorError::InvalidArgument("max_rejects must be >= 1".into()));
    }
    if grid.len() < 2 {
        return Err(PriorError::InvalidArgument("curve length must be >= 2".into()));
    }
    for _ in 0..max_rejects {
        let xi = sample_unconstrained(rng);
        if log_prior_density_on(&xi, grid).is_finite() {
            return Ok(xi);
        }
    }
    Err(PriorError::RejectionBudgetExhausted(max_rejects))
}

/// A configuration together with one noisy realization of its curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSample {
    pub config: CurveConfiguration,
    pub y: Vec<f64>,
}

/// Draws `y_t = f_comb(t) + eps_t`, `eps_t ~ Normal(0, sigma2)`, for `t = 1..=m`. Not clipped.
pub fn sample_curve<R: Rng + ?Sized>(rng: &mut R, xi: &CurveConfiguration, m: usize) -> PriorSample {
    sample_curve_on(rng, xi, &StepGrid::new(m))
}

pub fn sample_curve_on<R: Rng + ?Sized>(rng: &mut R, xi: &CurveConfiguration, grid: &StepGrid) -> PriorSample {
    let mut y = vec![0.0; grid.len()];
    xi.fill_comb(grid, &mut y);
    let sigma = xi.sigma2.max(0.0).sqrt();
    for v in &mut y {
        let z: f64 = rng.sample(StandardNormal);
        *v += sigma * z;
    }
    PriorSample { config: *xi, y }
}

/// Gaussian log-likelihood of the first `t_obs` observations.
pub fn log_likelihood(xi: &CurveConfiguration, y_prefix: &[f64], t_obs: usize) -> Result<f64> {
    if t_obs == 0 || t_obs > y_prefix.len() {
        return Err(PriorError::InvalidArgument(format!(
            "need 1 <= T <= {}, got T = {t_obs}",
            y_prefix.len()
        )));
    }
    if !(xi.sigma2 > 0.0) {
        return Err(PriorError::Domain(format!("sigma2 must be > 0, got {}", xi.sigma2)));
    }
    Ok(log_likelihood_unchecked(xi, &StepGrid::new(t_obs), &y_prefix[..t_obs]))
}

/// Gaussian log-likelihood over `y.len()` leading steps; `grid` must cover them.
pub fn log_likelihood_unchecked(xi: &CurveConfiguration, grid: &StepGrid, y: &[f64]) -> f64 {
    let var = xi.sigma2;
    let norm = -0.5 * (2.0 * PI * var).ln();
    let inv_two_var = 0.5 / var;
    let mut sum = 0.0;
    for ((&obs, &l), &il) in y.iter().zip(&grid.ln_t).zip(&grid.inv_ln_t1) {
        let r = obs - xi.comb_from_terms(l, il);
        sum += norm - r * r * inv_two_var;
    }
    sum
}

/// Convenience wrapper bundling curve length and rejection budget.
#[derive(Debug, Clone)]
pub struct PriorSampler {
    grid: StepGrid,
    max_rejects: usize,
}

impl PriorSampler {
    pub fn new(m: usize) -> Self {
        Self::with_max_rejects(m, DEFAULT_MAX_REJECTS)
    }

    pub fn with_max_rejects(m: usize, max_rejects: usize) -> Self {
        Self { grid: StepGrid::new(m), max_rejects }
    }

    pub fn curve_length(&self) -> usize {
        self.grid.len()
    }

    pub fn grid(&self) -> &StepGrid {
        &self.grid
    }

    pub fn sample_configuration<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<CurveConfiguration> {
        sample_configuration_on(rng, &self.grid, self.max_rejects)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<PriorSample> {
        let xi = self.sample_configuration(rng)?;
        Ok(sample_curve_on(rng, &xi, &self.grid))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn reference_config() -> CurveConfiguration {
        CurveConfiguration {
            weights: [0.4, 0.3, 0.2],
            pow3: Pow3Params { c: 0.9, a: 0.4, alpha: 0.7 },
            janoschek: JanoschekParams { alpha: 0.85, beta: 0.3, kappa: 0.2, delta: 0.9 },
            ilog2: Ilog2Params { c: 0.8, a: 0.3 },
            sigma2: 1e-3,
        }
    }

    #[test]
    fn basis_examples() {
        let p = BasisParams::Pow3(Pow3Params { c: 1.0, a: 0.0, alpha: 1.0 });
        assert_eq!(eval_basis(&p, 7).unwrap(), 1.0);
        let j = BasisParams::Janoschek(JanoschekParams { alpha: 0.8, beta: 0.8, kappa: 0.1, delta: 1.0 });
        assert_eq!(eval_basis(&j, 5).unwrap(), 0.8);
        let i = BasisParams::Ilog2(Ilog2Params { c: 0.5, a: 0.5 });
        // 0.5 - 0.5 / ln 2, computed externally.
        assert!((eval_basis(&i, 1).unwrap() - (-0.221_347_520_444_481_7)).abs() < 1e-12);
    }

    #[test]
    fn basis_domain_errors() {
        let p = BasisParams::Pow3(Pow3Params { c: 1.0, a: 0.1, alpha: 0.0 });
        assert!(matches!(eval_basis(&p, 3), Err(PriorError::Domain(_))));
        let j = BasisParams::Janoschek(JanoschekParams { alpha: 0.8, beta: 0.1, kappa: -1.0, delta: 1.0 });
        assert!(eval_basis(&j, 3).is_err());
        let i = BasisParams::Ilog2(Ilog2Params { c: 0.5, a: 0.5 });
        assert!(matches!(eval_basis(&i, 0), Err(PriorError::InvalidStep(0))));
    }

    #[test]
    fn comb_examples() {
        let mut xi = reference_config();
        xi.weights = [0.0; 3];
        assert_eq!(xi.eval_comb(3).unwrap(), 0.0);

        xi.weights = [1.0, 0.0, 0.0];
        xi.pow3 = Pow3Params { c: 0.9, a: 0.4, alpha: 1.0 };
        assert!((xi.eval_comb(2).unwrap() - 0.7).abs() < 1e-15);

        xi.weights = [0.5, 0.5, 0.0];
        xi.pow3 = Pow3Params { c: 1.0, a: 0.0, alpha: 1.0 };
        xi.janoschek = JanoschekParams { alpha: 0.6, beta: 0.6, kappa: 0.1, delta: 1.0 };
        assert!((xi.eval_comb(10).unwrap() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn fill_comb_matches_pointwise() {
        let xi = reference_config();
        let curve = xi.curve(100);
        for (i, v) in curve.iter().enumerate() {
            assert!((v - xi.eval_comb(i + 1).unwrap()).abs() < 1e-14);
        }
    }

    #[test]
    fn log_prior_out_of_support() {
        let mut xi = reference_config();
        assert!(log_prior_density(&xi, 100).is_finite());
        xi.weights[0] = 1.5;
        assert_eq!(log_prior_density(&xi, 100), f64::NEG_INFINITY);
    }

    #[test]
    fn log_prior_constant_curve_rejected() {
        let mut xi = reference_config();
        xi.weights = [1.0, 0.0, 0.0];
        xi.pow3.a = 0.0;
        assert_eq!(xi.eval_comb(1).unwrap(), xi.eval_comb(100).unwrap());
        assert_eq!(log_prior_density(&xi, 100), f64::NEG_INFINITY);
    }

    #[test]
    fn log_prior_matches_product_of_densities() {
        // Multiply the densities directly, then take a single log.
        fn lognormal_pdf(x: f64, mu: f64, var: f64) -> f64 {
            (-(x.ln() - mu).powi(2) / (2.0 * var)).exp() / (x * (2.0 * PI * var).sqrt())
        }
        let xi = reference_config();
        let density = 1.0 * 1.0 * 1.0 // weights on U(0,1)
            * (1.0 / 1.25) * (1.0 / 1.2) * lognormal_pdf(xi.pow3.alpha, 0.0, 4.0)
            * 1.0 * 0.5 * lognormal_pdf(xi.janoschek.kappa, -2.0, 1.0) * lognormal_pdf(xi.janoschek.delta, 0.0, 0.25)
            * 1.0 * 1.0
            * lognormal_pdf(xi.sigma2, -8.0, 2.0);
        let lp = log_prior_density(&xi, 100);
        assert!((lp - density.ln()).abs() < 1e-10, "{lp} vs {}", density.ln());
    }

    #[test]
    fn log_prior_is_pure() {
        let xi = reference_config();
        assert_eq!(log_prior_density(&xi, 100).to_bits(), log_prior_density(&xi, 100).to_bits());
    }

    #[test]
    fn sampled_configurations_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let xi = sample_configuration(&mut rng, 100, DEFAULT_MAX_REJECTS).unwrap();
            assert!(log_prior_density(&xi, 100).is_finite());
            assert!(xi.eval_comb(100).unwrap() - xi.eval_comb(1).unwrap() > 0.0);
        }
    }

    #[test]
    fn rejection_budget_is_enforced() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(matches!(
            sample_configuration(&mut rng, 100, 0),
            Err(PriorError::InvalidArgument(_))
        ));
        // With a single draw per call some calls must exhaust the budget.
        let failures = (0..200)
            .filter(|_| matches!(sample_configuration(&mut rng, 100, 1), Err(PriorError::RejectionBudgetExhausted(1))))
            .count();
        assert!(failures > 0);
    }

    #[test]
    fn zero_noise_curve_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut xi = reference_config();
        xi.sigma2 = 0.0;
        let s = sample_curve(&mut rng, &xi, 100);
        assert_eq!(s.y, xi.curve(100));
    }

    #[test]
    fn noise_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let xi = reference_config();
        let grid = StepGrid::new(1);
        let mean_curve = xi.curve(1)[0];
        let n = 100_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let r = sample_curve_on(&mut rng, &xi, &grid).y[0] - mean_curve;
            s1 += r;
            s2 += r * r;
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!((var / xi.sigma2 - 1.0).abs() < 0.05, "variance {var}");
        assert!(mean.abs() < 3.0 * xi.sigma2.sqrt() / (n as f64).sqrt());
    }

    #[test]
    fn log_likelihood_examples() {
        let mut xi = reference_config();
        xi.sigma2 = 1.0 / (2.0 * PI);
        let y1 = xi.eval_comb(1).unwrap();
        assert!(log_likelihood(&xi, &[y1], 1).unwrap().abs() < 1e-14);

        // Same residual repeated: T=2 doubles T=1.
        let r = 0.01;
        let y = [xi.eval_comb(1).unwrap() + r, xi.eval_comb(2).unwrap() + r];
        let l1 = log_likelihood(&xi, &y, 1).unwrap();
        let l2 = log_likelihood(&xi, &y, 2).unwrap();
        assert!((l2 - 2.0 * l1).abs() < 1e-14);

        xi.sigma2 = 0.0;
        assert!(matches!(log_likelihood(&xi, &y, 1), Err(PriorError::Domain(_))));
        assert!(log_likelihood(&xi, &y, 3).is_err());
        assert!(log_likelihood(&xi, &y, 0).is_err());
    }

    #[test]
    fn log_likelihood_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let xi = sample_configuration(&mut rng, 100, DEFAULT_MAX_REJECTS).unwrap();
            let y: Vec<f64> = (0..30).map(|_| rng.random::<f64>()).collect();
            let mut oracle = 0.0;
            for (i, &obs) in y.iter().enumerate() {
                let t = (i + 1) as f64;
                let mu = xi.weights[0] * (xi.pow3.c - xi.pow3.a * t.powf(-xi.pow3.alpha))
                    + xi.weights[1]
                        * (xi.janoschek.alpha
                            - (xi.janoschek.alpha - xi.janoschek.beta)
                                * (-xi.janoschek.kappa * t.powf(xi.janoschek.delta)).exp())
                    + xi.weights[2] * (xi.ilog2.c - xi.ilog2.a / (t + 1.0).ln());
                let sd = xi.sigma2.sqrt();
                oracle += -((obs - mu) / sd).powi(2) / 2.0 - sd.ln() - 0.5 * (2.0 * PI).ln();
            }
            let got = log_likelihood(&xi, &y, 30).unwrap();
            assert!((got - oracle).abs() < 1e-10 * oracle.abs().max(1.0), "{got} vs {oracle}");
        }
    }

    #[test]
    fn comb_monotone_in_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let xi = sample_configuration(&mut rng, 100, DEFAULT_MAX_REJECTS).unwrap();
            let t = rng.random_range(1..=100usize);
            for k in 0..NUM_BASIS {
                let basis = eval_basis(&xi.basis(BasisKind::ALL[k]), t).unwrap();
                if basis > 0.0 {
                    let mut bumped = xi;
                    bumped.weights[k] += 0.1;
                    assert!(bumped.eval_comb(t).unwrap() > xi.eval_comb(t).unwrap());
                }
            }
        }
    }
}
