//! Cutoff protocol, metrics and rank aggregation for predictive methods.
//!
//! All metrics are computed on normalized values: a curve is mapped through
//! its [`NormalizationSpec`], thinned to the provider's maximum length, cut
//! after `T = max(1, ceil(fraction * len))` points, and scored on the
//! remaining steps.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use thiserror::Error;

use crate::mcmc::{self, ChainConfig, McmcError, MixturePPD};
use crate::normalize::{NormalizationSpec, NormalizeError, Normalizer};
use crate::pfn::{DiscretePPD, Pfn, PfnError};

/// Cutoff fractions used throughout the evaluation protocol.
pub const CUTOFF_FRACTIONS: [f64; 4] = [0.1, 0.2, 0.4, 0.8];

/// Slack subtracted before rounding `fraction * len` up, so that products
/// like `0.4 * 35` that land a hair above an integer are not bumped.
const CUTOFF_SLACK: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid curve: {0}")]
    InvalidCurve(String),
    #[error("invalid cutoff: {0}")]
    InvalidCutoff(String),
    #[error("missing record for method {method} on curve {curve_id} at cutoff {cutoff}")]
    MissingRecord { method: String, curve_id: String, cutoff: f64 },
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error(transparent)]
    Normalize(#[from] NormalizeError),
    #[error(transparent)]
    Pfn(#[from] PfnError),
    #[error(transparent)]
    Mcmc(#[from] McmcError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Read-only view of a one-dimensional predictive distribution.
pub trait PredictiveDistribution: Send {
    fn loglik(&self, y: f64) -> f64;
    fn cdf(&self, y: f64) -> f64;
    fn quantile(&self, q: f64) -> f64;

    fn exceed_prob(&self, threshold: f64) -> f64 {
        1.0 - self.cdf(threshold)
    }

    fn median(&self) -> f64 {
        self.quantile(0.5)
    }
}

impl PredictiveDistribution for DiscretePPD {
    fn loglik(&self, y: f64) -> f64 {
        DiscretePPD::loglik(self, y)
    }

    fn cdf(&self, y: f64) -> f64 {
        DiscretePPD::cdf(self, y)
    }

    fn quantile(&self, q: f64) -> f64 {
        DiscretePPD::quantile(self, q)
    }

    fn exceed_prob(&self, threshold: f64) -> f64 {
        DiscretePPD::exceed_prob(self, threshold)
    }
}

impl PredictiveDistribution for MixturePPD {
    fn loglik(&self, y: f64) -> f64 {
        self.logpdf(y)
    }

    fn cdf(&self, y: f64) -> f64 {
        MixturePPD::cdf(self, y)
    }

    fn quantile(&self, q: f64) -> f64 {
        MixturePPD::quantile(self, q)
    }

    fn exceed_prob(&self, threshold: f64) -> f64 {
        MixturePPD::exceed_prob(self, threshold)
    }
}

pub type BoxedPPD = Box<dyn PredictiveDistribution>;

/// A method that turns an observed prefix into one PPD per query step.
pub trait PpdProvider: Sync {
    fn name(&self) -> &str;

    /// Longest curve the method models; longer curves are subsampled.
    fn max_length(&self) -> usize;

    /// `observed` holds the values at steps `1..=observed.len()`; queries are
    /// 1-based steps after the prefix.
    fn predict(&self, observed: &[f64], queries: &[usize]) -> Result<Vec<BoxedPPD>>;
}

/// [`Pfn`] under a method name.
pub struct PfnProvider<'a> {
    pub name: String,
    pub pfn: &'a Pfn,
}

impl<'a> PfnProvider<'a> {
    pub fn new(pfn: &'a Pfn) -> Self {
        Self { name: "pfn".into(), pfn }
    }
}

impl PpdProvider for PfnProvider<'_> {
    fn name(&self) -> &str {
        &self.name
    }

    fn max_length(&self) -> usize {
        self.pfn.config().m
    }

    fn predict(&self, observed: &[f64], queries: &[usize]) -> Result<Vec<BoxedPPD>> {
        let prefix: Vec<(usize, f64)> = observed.iter().enumerate().map(|(i, &y)| (i + 1, y)).collect();
        Ok(self.pfn.predict(&prefix, queries)?.into_iter().map(|p| Box::new(p) as BoxedPPD).collect())
    }
}

/// Ensemble MCMC run afresh for every prefix with a fixed chain seed.
pub struct McmcProvider {
    pub name: String,
    pub chain: ChainConfig,
    pub m: usize,
}

impl McmcProvider {
    pub fn new(chain: ChainConfig, m: usize) -> Self {
        Self { name: "mcmc".into(), chain, m }
    }
}

impl PpdProvider for McmcProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn max_length(&self) -> usize {
        self.m
    }

    fn predict(&self, observed: &[f64], queries: &[usize]) -> Result<Vec<BoxedPPD>> {
        if let Some(&q) = queries.iter().find(|&&q| q == 0 || q > self.m) {
            return Err(EvalError::InvalidCutoff(format!("query step {q} outside 1..={}", self.m)));
        }
        let ensemble = mcmc::run_sampler(observed, observed.len(), self.m, &self.chain)?;
        Ok(queries.iter().map(|&t| Box::new(ensemble.ppd(t)) as BoxedPPD).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearningCurve {
    pub task_id: String,
    pub run_id: String,
    /// Raw observations at steps `1..=len`.
    pub values: Vec<f64>,
    /// `None` for curves already in normalized space.
    pub spec: Option<NormalizationSpec>,
}

fn check_id(kind: &str, id: &str) -> Result<()> {
    if id.is_empty() || id.contains([',', '\n', '\r']) {
        return Err(EvalError::InvalidCurve(format!("{kind} {id:?} must be non-empty without commas or newlines")));
    }
    Ok(())
}

impl LearningCurve {
    pub fn new(task_id: &str, run_id: &str, values: Vec<f64>, spec: Option<NormalizationSpec>) -> Result<Self> {
        check_id("task id", task_id)?;
        check_id("run id", run_id)?;
        if values.len() < 2 {
            return Err(EvalError::InvalidCurve(format!("{task_id}/{run_id}: need at least 2 values")));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(EvalError::InvalidCurve(format!("{task_id}/{run_id}: NaN value")));
        }
        if let Some(spec) = &spec {
            spec.validate()?;
            if let Some(v) = values.iter().find(|&&v| v < spec.l_hard || v > spec.u_hard) {
                return Err(EvalError::InvalidCurve(format!("{task_id}/{run_id}: value {v} outside hard bounds")));
            }
        } else if values.iter().any(|v| v.is_infinite()) {
            return Err(EvalError::InvalidCurve(format!("{task_id}/{run_id}: infinite normalized value")));
        }
        Ok(Self { task_id: task_id.into(), run_id: run_id.into(), values, spec })
    }

    pub fn id(&self) -> String {
        format!("{}/{}", self.task_id, self.run_id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn normalized(&self) -> Result<Vec<f64>> {
        match &self.spec {
            Some(spec) => Ok(Normalizer::new(*spec)?.forward_all(&self.values)?),
            None => Ok(self.values.clone()),
        }
    }
}

/// Keeps indices `0, s, 2s, ...` with `s = ceil(len / m)`; identity when `len <= m`.
pub fn subsample<T: Clone>(values: &[T], m: usize) -> Vec<T> {
    assert!(m > 0, "m must be positive");
    if values.len() <= m {
        return values.to_vec();
    }
    let stride = values.len().div_ceil(m);
    values.iter().step_by(stride).cloned().collect()
}

/// Number of observed points for a cutoff fraction of a curve of length `len`.
pub fn cutoff_index(fraction: f64, len: usize) -> Result<usize> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(EvalError::InvalidCutoff(format!("fraction {fraction} must be in (0, 1)")));
    }
    let t = ((fraction * len as f64 - CUTOFF_SLACK).ceil() as usize).max(1);
    if t >= len {
        return Err(EvalError::InvalidCutoff(format!("cutoff {fraction} leaves nothing to predict for length {len}")));
    }
    Ok(t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub curve_id: String,
    pub method: String,
    pub cutoff: f64,
    pub ll: f64,
    pub mse: f64,
}

/// Mean log-density and mean squared error of the PPD median on the censored steps.
pub fn evaluate<P: PpdProvider + ?Sized>(provider: &P, curve: &LearningCurve, cutoff_fraction: f64) -> Result<EvalRecord> {
    let values = subsample(&curve.normalized()?, provider.max_length());
    let t = cutoff_index(cutoff_fraction, values.len())?;
    let queries: Vec<usize> = (t + 1..=values.len()).collect();
    let ppds = provider.predict(&values[..t], &queries)?;
    if ppds.len() != queries.len() {
        return Err(EvalError::InvalidRecord(format!("{} returned {} PPDs for {} queries", provider.name(), ppds.len(), queries.len())));
    }
    let truth = &values[t..];
    let n = truth.len() as f64;
    let ll = ppds.iter().zip(truth).map(|(p, &y)| p.loglik(y)).sum::<f64>() / n;
    let mse = ppds.iter().zip(truth).map(|(p, &y)| (p.median() - y).powi(2)).sum::<f64>() / n;
    Ok(EvalRecord { curve_id: curve.id(), method: provider.name().to_string(), cutoff: cutoff_fraction, ll, mse })
}

/// Evaluates every `(curve, cutoff)` pair on up to `threads` worker threads.
/// Output order is curve-major, cutoff-minor, independent of `threads`.
pub fn evaluate_all<P: PpdProvider + ?Sized>(
    provider: &P,
    curves: &[LearningCurve],
    cutoffs: &[f64],
    threads: usize,
) -> Result<Vec<EvalRecord>> {
    let jobs: Vec<(usize, f64)> = curves.iter().enumerate().flat_map(|(i, _)| cutoffs.iter().map(move |&c| (i, c))).collect();
    let threads = threads.max(1).min(jobs.len().max(1));
    let chunk = jobs.len().div_ceil(threads).max(1);
    let results: Vec<Result<Vec<EvalRecord>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(|&(i, c)| evaluate(provider, &curves[i], c)).collect()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(jobs.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

/// Mean rank of one method at one cutoff, 1 being best.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanRank {
    pub method: String,
    pub cutoff: f64,
    pub ll_rank: f64,
    pub mse_rank: f64,
    pub curves: usize,
}

/// Ranks of `scores` where smaller is better; ties share the average rank.
pub fn average_ranks(scores: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Per-curve ranks (highest LL and lowest MSE best) averaged over curves,
/// for every method and cutoff. Every method must have exactly one record
/// for every `(curve, cutoff)` present.
pub fn rank_aggregate(records: &[EvalRecord]) -> Result<Vec<MeanRank>> {
    for r in records {
        if r.ll.is_nan() || r.mse.is_nan() || r.mse < 0.0 {
            return Err(EvalError::InvalidRecord(format!("{} / {} at {}: ll {} mse {}", r.curve_id, r.method, r.cutoff, r.ll, r.mse)));
        }
    }
    let methods: BTreeSet<&str> = records.iter().map(|r| r.method.as_str()).collect();
    let methods: Vec<&str> = methods.into_iter().collect();
    // cutoff bits order like the values for positive cutoffs.
    let mut groups: BTreeMap<(u64, &str), BTreeMap<&str, &EvalRecord>> = BTreeMap::new();
    for r in records {
        let slot = groups.entry((r.cutoff.to_bits(), r.curve_id.as_str())).or_default();
        if slot.insert(r.method.as_str(), r).is_some() {
            return Err(EvalError::InvalidRecord(format!("duplicate record for {} on {} at {}", r.method, r.curve_id, r.cutoff)));
        }
    }
    let mut sums: BTreeMap<(u64, &str), (f64, f64, usize)> = BTreeMap::new();
    for ((cutoff_bits, curve_id), by_method) in &groups {
        let mut lls = Vec::with_capacity(methods.len());
        let mut mses = Vec::with_capacity(methods.len());
        for &method in &methods {
            let r = by_method.get(method).ok_or_else(|| EvalError::MissingRecord {
                method: method.to_string(),
                curve_id: curve_id.to_string(),
                cutoff: f64::from_bits(*cutoff_bits),
            })?;
            lls.push(-r.ll);
            mses.push(r.mse);
        }
        let ll_ranks = average_ranks(&lls);
        let mse_ranks = average_ranks(&mses);
        for (k, &method) in methods.iter().enumerate() {
            let e = sums.entry((*cutoff_bits, method)).or_insert((0.0, 0.0, 0));
            e.0 += ll_ranks[k];
            e.1 += mse_ranks[k];
            e.2 += 1;
        }
    }
    Ok(sums
        .into_iter()
        .map(|((bits, method), (ll, mse, n))| MeanRank {
            method: method.to_string(),
            cutoff: f64::from_bits(bits),
            ll_rank: ll / n as f64,
            mse_rank: mse / n as f64,
            curves: n,
        })
        .collect())
}

pub const RECORD_HEADER: &str = "curve_id,method,cutoff,ll,mse";

pub fn write_records_csv<W: Write>(mut w: W, records: &[EvalRecord]) -> std::io::Result<()> {
    writeln!(w, "{RECORD_HEADER}")?;
    for r in records {
        writeln!(w, "{},{},{},{},{}", r.curve_id, r.method, r.cutoff, r.ll, r.mse)?;
    }
    Ok(())
}

pub fn write_ranks_csv<W: Write>(mut w: W, ranks: &[MeanRank]) -> std::io::Result<()> {
    writeln!(w, "method,cutoff,ll_rank,mse_rank,curves")?;
    for r in ranks {
        writeln!(w, "{},{},{},{},{}", r.method, r.cutoff, r.ll_rank, r.mse_rank, r.curves)?;
    }
    Ok(())
}
