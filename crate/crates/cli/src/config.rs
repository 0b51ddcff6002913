//! Flat `key = value` run configuration.
//!
//! One pair per line; blank lines and lines starting with `#` are ignored.
//! Keys must be listed in [`KNOWN_KEYS`] and may appear only once.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use lcx_core::earlystop::{Schedule, TerminationPolicy};
use lcx_core::mcmc::{ChainConfig, InitStrategy};
use lcx_core::pfn::{ModelConfig, TrainConfig};

use crate::error::{CliError, Result};

/// Every accepted key with a one-line description.
pub const KNOWN_KEYS: &[(&str, &str)] = &[
    ("n", "number of curves to sample"),
    ("m", "curve length the models handle"),
    ("means_out", "optional path for noiseless prior means (sample-prior)"),
    ("nbins", "output bins of the network"),
    ("n_draws", "prior curves pooled when building bins"),
    ("bins", "bin edge file; built from the prior when absent (train)"),
    ("nlayers", "transformer layers"),
    ("emsize", "embedding size"),
    ("nheads", "attention heads"),
    ("nhidden", "feed-forward hidden size"),
    ("nb_data", "total synthetic curves consumed by training"),
    ("batch_size", "curves per optimizer step"),
    ("lr", "peak learning rate"),
    ("warmup_fraction", "fraction of steps with linear warmup"),
    ("materialize", "pre-generate the whole training set (true/false)"),
    ("checkpoint", "network checkpoint path"),
    ("curves", "input curve file"),
    ("u_soft_from_first", "use each curve's first value as its u_soft (true/false)"),
    ("cutoff", "observed fraction of each curve (infer)"),
    ("queries", "comma-separated original steps to report (infer); default all after the cutoff"),
    ("cutoffs", "comma-separated cutoff fractions (eval)"),
    ("methods", "comma-separated methods: pfn, mcmc (eval)"),
    ("nwalkers", "MCMC walkers"),
    ("nsamples", "MCMC post-burn-in sweeps"),
    ("burn_in", "MCMC burn-in sweeps"),
    ("thin", "MCMC thinning interval"),
    ("init", "MCMC initialization: lse, map, default"),
    ("policy", "termination policy: predictive, patience, none"),
    ("confidence", "predictive policy confidence 1 - delta"),
    ("schedule", "predictive cutoff schedule: fine, coarse"),
    ("min_cutoff", "earliest epoch the predictive policy may stop at"),
    ("k", "patience in epochs"),
    ("orderings", "random candidate orderings per task; 0 keeps file order"),
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn check_key(key: &str) -> Result<()> {
    if KNOWN_KEYS.iter().any(|(k, _)| *k == key) {
        Ok(())
    } else {
        Err(CliError::Config(format!("unknown config key `{key}`")))
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let key = key.trim();
            if cfg.values.contains_key(key) {
                return Err(CliError::Config(format!("line {}: duplicate key `{key}`", lineno + 1)));
            }
            cfg.set(key, value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        check_key(key)?;
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair.split_once('=').ok_or_else(|| CliError::Config(format!("override `{pair}` is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        debug_assert!(check_key(key).is_ok(), "undeclared key {key}");
        self.values
            .get(key)
            .map(|v| v.parse::<T>().map_err(|e| CliError::Config(format!("key `{key}`: cannot parse `{v}`: {e}"))))
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        self.get(key)?.ok_or_else(|| CliError::Config(format!("missing required key `{key}`")))
    }

    pub fn path(&self, key: &str) -> Result<PathBuf> {
        self.require::<String>(key).map(PathBuf::from)
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: Display,
    {
        let Some(raw) = self.raw(key) else { return Ok(None) };
        raw.split(',')
            .map(|s| {
                let s = s.trim();
                s.parse::<T>().map_err(|e| CliError::Config(format!("key `{key}`: cannot parse `{s}`: {e}")))
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let d = ModelConfig::default();
        let cfg = ModelConfig {
            nlayers: self.get_or("nlayers", d.nlayers)?,
            emsize: self.get_or("emsize", d.emsize)?,
            nheads: self.get_or("nheads", d.nheads)?,
            nhidden: self.get_or("nhidden", d.nhidden)?,
            nbins: self.get_or("nbins", d.nbins)?,
            m: self.get_or("m", d.m)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self, seed: u64) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            nb_data: self.get_or("nb_data", d.nb_data)?,
            batch_size: self.get_or("batch_size", d.batch_size)?,
            lr: self.get_or("lr", d.lr)?,
            warmup_fraction: self.get_or("warmup_fraction", d.warmup_fraction)?,
            seed,
            materialize: self.get_or("materialize", d.materialize)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn chain_config(&self, seed: u64) -> Result<ChainConfig> {
        let d = ChainConfig::default();
        let cfg = ChainConfig {
            nwalkers: self.get_or("nwalkers", d.nwalkers)?,
            nsamples: self.get_or("nsamples", d.nsamples)?,
            burn_in: self.get_or("burn_in", d.burn_in)?,
            thin: self.get_or("thin", d.thin)?,
            init: self.get_or::<InitStrategy>("init", d.init)?,
            seed,
            ..d
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn policy(&self) -> Result<TerminationPolicy> {
        let kind: String = self.get_or("policy", "predictive".to_string())?;
        let policy = match kind.as_str() {
            "predictive" => {
                let confidence: f64 = self.get_or("confidence", 0.95)?;
                TerminationPolicy::Predictive {
                    delta: 1.0 - confidence,
                    schedule: self.get_or::<Schedule>("schedule", Schedule::Fine)?,
                    min_cutoff: self.get_or("min_cutoff", 2)?,
                }
            }
            "patience" => TerminationPolicy::Patience { k: self.require("k")? },
            "none" => TerminationPolicy::None,
            other => return Err(CliError::Config(format!("unknown policy `{other}`"))),
        };
        policy.validate()?;
        Ok(policy)
    }
}

/// Markdown table of [`KNOWN_KEYS`] for help output.
pub fn describe_keys() -> String {
    KNOWN_KEYS.iter().map(|(k, d)| format!("  {k:<16} {d}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_pairs() {
        let cfg = RunConfig::parse("# comment\nnlayers = 2\n\nemsize=16\nlr = 1e-3\nmethods = pfn, mcmc\n").unwrap();
        assert_eq!(cfg.require::<usize>("nlayers").unwrap(), 2);
        assert_eq!(cfg.get::<f64>("lr").unwrap(), Some(1e-3));
        assert_eq!(cfg.list::<String>("methods").unwrap().unwrap(), vec!["pfn", "mcmc"]);
        let model = cfg.model_config().unwrap();
        assert_eq!((model.nlayers, model.emsize, model.nheads), (2, 16, 4));
    }

    #[test]
    fn rejects_unknown_duplicate_and_malformed() {
        assert!(matches!(RunConfig::parse("nlayerz = 2"), Err(CliError::Config(_))));
        assert!(matches!(RunConfig::parse("k = 2\nk = 3"), Err(CliError::Config(_))));
        assert!(matches!(RunConfig::parse("just words"), Err(CliError::Config(_))));
        let cfg = RunConfig::parse("nlayers = two").unwrap();
        assert!(matches!(cfg.model_config(), Err(CliError::Config(_))));
        let cfg = RunConfig::parse("emsize = 10").unwrap();
        assert!(matches!(cfg.model_config(), Err(CliError::Config(_))));
    }

    #[test]
    fn policies() {
        assert_eq!(RunConfig::parse("policy = none").unwrap().policy().unwrap(), TerminationPolicy::None);
        assert_eq!(
            RunConfig::parse("policy = patience\nk = 3").unwrap().policy().unwrap(),
            TerminationPolicy::Patience { k: 3 }
        );
        let p = RunConfig::parse("confidence = 0.99\nschedule = coarse").unwrap().policy().unwrap();
        match p {
            TerminationPolicy::Predictive { delta, schedule, min_cutoff } => {
                assert!((delta - 0.01).abs() < 1e-15);
                assert_eq!(schedule, Schedule::Coarse);
                assert_eq!(min_cutoff, 2);
            }
            other => panic!("{other:?}"),
        }
        assert!(RunConfig::parse("policy = patience").unwrap().policy().is_err());
    }
}
