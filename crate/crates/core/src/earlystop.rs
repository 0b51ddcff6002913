//! Vertical model selection: candidate runs are trained one epoch at a time
//! in a fixed order, a termination policy may abandon the current run after
//! any epoch, and abandoned runs are never resumed.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::eval::{BoxedPPD, EvalError, PpdProvider, Result};

/// Total epochs of a selection run, in units of `m`.
pub const BUDGET_RUNS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    /// Every cutoff `1 < T < m`.
    Fine,
    /// `T` in `{ceil(0.1 m), ceil(0.2 m), ceil(0.4 m), ceil(0.8 m)}`.
    Coarse,
}

impl Schedule {
    pub fn contains(self, t: usize, m: usize) -> bool {
        match self {
            Schedule::Fine => 1 < t && t < m,
            Schedule::Coarse => [1usize, 2, 4, 8].iter().any(|&tenths| t == (tenths * m).div_ceil(10)),
        }
    }
}

impl FromStr for Schedule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "fine" => Ok(Schedule::Fine),
            "coarse" => Ok(Schedule::Coarse),
            other => Err(format!("unknown schedule {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TerminationPolicy {
    /// Stop once no future epoch is likely to beat the incumbent.
    Predictive { delta: f64, schedule: Schedule, min_cutoff: usize },
    /// Stop after `k` epochs without a new best.
    Patience { k: usize },
    None,
}

impl TerminationPolicy {
    pub fn predictive(confidence: f64, schedule: Schedule) -> Self {
        TerminationPolicy::Predictive { delta: 1.0 - confidence, schedule, min_cutoff: 2 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            TerminationPolicy::Predictive { delta, min_cutoff, .. } => {
                if !(0.0..1.0).contains(&delta) {
                    return Err(EvalError::InvalidCutoff(format!("delta {delta} must be in [0, 1)")));
                }
                if min_cutoff == 0 {
                    return Err(EvalError::InvalidCutoff("min_cutoff must be >= 1".into()));
                }
            }
            TerminationPolicy::Patience { k } if k == 0 => {
                return Err(EvalError::InvalidCutoff("patience k must be >= 1".into()));
            }
            _ => {}
        }
        Ok(())
    }
}

impl fmt::Display for TerminationPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TerminationPolicy::Predictive { delta, schedule, min_cutoff } => {
                let schedule = match schedule {
                    Schedule::Fine => "fine",
                    Schedule::Coarse => "coarse",
                };
                write!(f, "predictive-{schedule}-{}-min{min_cutoff}", 1.0 - delta)
            }
            TerminationPolicy::Patience { k } => write!(f, "patience-{k}"),
            TerminationPolicy::None => write!(f, "none"),
        }
    }
}

/// `max_t Pr(y_t > threshold)` over the given PPDs.
pub fn max_exceedance(ppds: &[BoxedPPD], threshold: f64) -> f64 {
    ppds.iter().map(|p| p.exceed_prob(threshold)).fold(0.0, f64::max)
}

/// Predictive termination rule for a run whose first `prefix.len()` values are known.
#[allow(clippy::too_many_arguments)]
pub fn should_stop_predictive<P: PpdProvider + ?Sized>(
    provider: &P,
    y_best: Option<f64>,
    prefix: &[f64],
    m: usize,
    delta: f64,
    schedule: Schedule,
    min_cutoff: usize,
) -> Result<bool> {
    let t = prefix.len();
    let Some(best) = y_best else { return Ok(false) };
    if t < min_cutoff || t >= m || !schedule.contains(t, m) {
        return Ok(false);
    }
    let queries: Vec<usize> = (t + 1..=m).collect();
    let ppds = provider.predict(prefix, &queries)?;
    Ok(max_exceedance(&ppds, best) <= delta)
}

/// True when the running best was set at least `k` observations ago.
pub fn should_stop_patience(prefix: &[f64], k: usize) -> bool {
    assert!(k >= 1, "patience k must be >= 1");
    let Some(mut best) = prefix.first().copied() else { return false };
    let mut best_idx = 0;
    for (i, &v) in prefix.iter().enumerate().skip(1) {
        if v > best {
            best = v;
            best_idx = i;
        }
    }
    best_idx + k < prefix.len()
}

/// Candidate curves of one task in their training order, normalized and
/// higher-is-better.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionRun {
    pub task: String,
    pub curves: Vec<Vec<f64>>,
    pub m: usize,
    pub budget: usize,
}

impl SelectionRun {
    pub fn new(task: &str, curves: Vec<Vec<f64>>, m: usize) -> Result<Self> {
        if m < 2 {
            return Err(EvalError::InvalidCurve("m must be >= 2".into()));
        }
        if curves.is_empty() {
            return Err(EvalError::InvalidCurve(format!("task {task} has no candidates")));
        }
        for (i, c) in curves.iter().enumerate() {
            if c.is_empty() || c.len() > m {
                return Err(EvalError::InvalidCurve(format!("task {task} candidate {i} has length {} (m = {m})", c.len())));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(EvalError::InvalidCurve(format!("task {task} candidate {i} has a non-finite value")));
            }
        }
        Ok(Self { task: task.into(), curves, m, budget: BUDGET_RUNS * m })
    }

    /// Same task with candidates reordered.
    pub fn reordered(&self, order: &[usize]) -> Self {
        Self { curves: order.iter().map(|&i| self.curves[i].clone()).collect(), ..self.clone() }
    }

    pub fn best_attainable(&self) -> f64 {
        self.curves.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Regret after each revealed epoch; entry `i` follows `i + 1` epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretTrajectory {
    pub regret: Vec<f64>,
    /// Epochs spent on each started candidate.
    pub epochs_per_run: Vec<usize>,
}

impl RegretTrajectory {
    pub fn epochs(&self) -> usize {
        self.regret.len()
    }

    pub fn final_regret(&self) -> f64 {
        *self.regret.last().expect("trajectory has at least one epoch")
    }

    /// Trajectory extended with its last value to `len` epochs.
    pub fn padded(&self, len: usize) -> Vec<f64> {
        let mut out = self.regret.clone();
        let last = self.final_regret();
        out.resize(len.max(out.len()), last);
        out
    }
}

/// Replays selection runs, remembering for each seen prefix the incumbent
/// level above which the predictive rule stops. The rule is monotone in
/// the incumbent, so one forward query per prefix serves every ordering.
pub struct Simulator<'a> {
    provider: Option<&'a dyn PpdProvider>,
    thresholds: HashMap<(usize, u64, Vec<u64>), f64>,
}

impl<'a> Simulator<'a> {
    pub fn new(provider: Option<&'a dyn PpdProvider>) -> Self {
        Self { provider, thresholds: HashMap::new() }
    }

    /// Smallest incumbent value at which the predictive rule stops after `prefix`.
    fn stop_threshold(&mut self, prefix: &[f64], m: usize, delta: f64) -> Result<f64> {
        let key = (m, delta.to_bits(), prefix.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        if let Some(&t) = self.thresholds.get(&key) {
            return Ok(t);
        }
        let provider = self
            .provider
            .ok_or_else(|| EvalError::InvalidCutoff("predictive policy needs a PPD provider".into()))?;
        let queries: Vec<usize> = (prefix.len() + 1..=m).collect();
        let ppds = provider.predict(prefix, &queries)?;
        let threshold = incumbent_threshold(&ppds, delta);
        self.thresholds.insert(key, threshold);
        Ok(threshold)
    }

    pub fn simulate(&mut self, selection: &SelectionRun, policy: TerminationPolicy) -> Result<RegretTrajectory> {
        policy.validate()?;
        let best_task = selection.best_attainable();
        let m = selection.m;
        let mut y_best: Option<f64> = None;
        let mut regret = Vec::with_capacity(selection.budget);
        let mut epochs_per_run = Vec::new();
        'candidates: for curve in &selection.curves {
            if regret.len() >= selection.budget {
                break;
            }
            let mut spent = 0;
            for t in 1..=curve.len() {
                if regret.len() >= selection.budget {
                    epochs_per_run.push(spent);
                    break 'candidates;
                }
                let y = curve[t - 1];
                spent += 1;
                let best = y_best.map_or(y, |b| b.max(y));
                y_best = Some(best);
                regret.push(best_task - best);
                if t == curve.len() {
                    break;
                }
                let prefix = &curve[..t];
                let stop = match policy {
                    TerminationPolicy::None => false,
                    TerminationPolicy::Patience { k } => should_stop_patience(prefix, k),
                    TerminationPolicy::Predictive { delta, schedule, min_cutoff } => {
                        t >= min_cutoff && t < m && schedule.contains(t, m) && best >= self.stop_threshold(prefix, m, delta)?
                    }
                };
                if stop {
                    break;
                }
            }
            epochs_per_run.push(spent);
        }
        Ok(RegretTrajectory { regret, epochs_per_run })
    }
}

/// Smallest `y` with `max_exceedance(ppds, y) <= delta`, by bisection down to
/// adjacent doubles; `+inf` when no finite `y` qualifies.
pub fn incumbent_threshold(ppds: &[BoxedPPD], delta: f64) -> f64 {
    let stops = |y: f64| max_exceedance(ppds, y) <= delta;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut width = 1.0;
    while stops(lo) {
        lo -= width;
        width *= 2.0;
        if !lo.is_finite() {
            return f64::NEG_INFINITY;
        }
    }
    width = 1.0;
    while !stops(hi) {
        hi += width;
        width *= 2.0;
        if !hi.is_finite() {
            return f64::INFINITY;
        }
    }
    loop {
        let mid = lo + (hi - lo) / 2.0;
        if mid <= lo || mid >= hi {
            return hi;
        }
        if stops(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
}

pub fn simulate(selection: &SelectionRun, policy: TerminationPolicy, provider: Option<&dyn PpdProvider>) -> Result<RegretTrajectory> {
    Simulator::new(provider).simulate(selection, policy)
}

/// `count` seeded random permutations of `0..n`.
pub fn random_orderings(n: usize, count: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            order
        })
        .collect()
}

/// Pointwise mean and standard error of trajectories padded to `len`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateTrajectory {
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl AggregateTrajectory {
    /// First epoch count at which the mean regret is at most `target`.
    pub fn epochs_to_reach(&self, target: f64) -> Option<usize> {
        self.mean.iter().position(|&r| r <= target).map(|i| i + 1)
    }
}

pub fn aggregate(trajectories: &[RegretTrajectory], len: usize) -> AggregateTrajectory {
    assert!(!trajectories.is_empty(), "nothing to aggregate");
    let padded: Vec<Vec<f64>> = trajectories.iter().map(|t| t.padded(len)).collect();
    let len = padded.iter().map(Vec::len).max().unwrap();
    let n = padded.len() as f64;
    let mut mean = vec![0.0; len];
    let mut stderr = vec![0.0; len];
    for i in 0..len {
        let mu = padded.iter().map(|p| p[i]).sum::<f64>() / n;
        mean[i] = mu;
        if padded.len() > 1 {
            let var = padded.iter().map(|p| (p[i] - mu).powi(2)).sum::<f64>() / (n - 1.0);
            stderr[i] = (var / n).sqrt();
        }
    }
    AggregateTrajectory { mean, stderr }
}

pub const TRAJECTORY_HEADER: &str = "policy,task,ordering,cum_epochs,regret";

pub fn write_trajectory_csv<W: Write>(
    mut w: W,
    policy: &TerminationPolicy,
    task: &str,
    ordering: usize,
    trajectory: &RegretTrajectory,
) -> std::io::Result<()> {
    for (i, r) in trajectory.regret.iter().enumerate() {
        writeln!(w, "{policy},{task},{ordering},{},{r}", i + 1)?;
    }
    Ok(())
}
