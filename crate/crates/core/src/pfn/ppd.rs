//! Discretized predictive distribution over a [`BinGrid`].

use std::sync::Arc;

use super::BinGrid;

/// Clamp applied to `y` before density lookup.
const DENSITY_CLAMP: f64 = 1e-9;

/// Bin probabilities with a piecewise-constant density inside each bin.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePPD {
    probs: Vec<f64>,
    cumulative: Vec<f64>,
    grid: Arc<BinGrid>,
}

impl DiscretePPD {
    /// `probs` is renormalized to sum to one.
    pub fn new(mut probs: Vec<f64>, grid: Arc<BinGrid>) -> Self {
        assert_eq!(probs.len(), grid.nbins(), "one probability per bin");
        assert!(probs.iter().all(|p| *p >= 0.0 && p.is_finite()), "probabilities must be finite and nonnegative");
        let total: f64 = probs.iter().sum();
        assert!(total > 0.0, "probabilities must not all be zero");
        for p in &mut probs {
            *p /= total;
        }
        let mut cumulative = Vec::with_capacity(probs.len() + 1);
        let mut acc = 0.0;
        cumulative.push(0.0);
        for p in &probs {
            acc += p;
            cumulative.push(acc);
        }
        *cumulative.last_mut().unwrap() = 1.0;
        Self { probs, cumulative, grid }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn grid(&self) -> &Arc<BinGrid> {
        &self.grid
    }

    /// Log density at `y` (clamped to `[1e-9, 1 - 1e-9]`).
    pub fn loglik(&self, y: f64) -> f64 {
        let y = if y.is_nan() { 0.5 } else { y.clamp(DENSITY_CLAMP, 1.0 - DENSITY_CLAMP) };
        let b = self.grid.bin_of(y);
        self.probs[b].ln() - self.grid.width(b).ln()
    }

    /// CDF, linear within each bin.
    pub fn cdf(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        if y >= 1.0 {
            return 1.0;
        }
        let b = self.grid.bin_of(y);
        let lo = self.grid.edges()[b];
        let frac = ((y - lo) / self.grid.width(b)).clamp(0.0, 1.0);
        (self.cumulative[b] + self.probs[b] * frac).clamp(0.0, 1.0)
    }

    /// Inverse of [`DiscretePPD::cdf`].
    pub fn quantile(&self, q: f64) -> f64 {
        assert!(q > 0.0 && q < 1.0, "quantile level must be in (0, 1)");
        // First bin whose upper cumulative reaches q.
        let b = self.cumulative[1..].partition_point(|&c| c < q).min(self.probs.len() - 1);
        let edges = self.grid.edges();
        let p = self.probs[b];
        if p <= 0.0 {
            return edges[b];
        }
        let frac = ((q - self.cumulative[b]) / p).clamp(0.0, 1.0);
        edges[b] + frac * self.grid.width(b)
    }

    pub fn exceed_prob(&self, threshold: f64) -> f64 {
        1.0 - self.cdf(threshold)
    }

    pub fn median(&self) -> f64 {
        self.quantile(0.5)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_density_is_one() {
        let grid = Arc::new(BinGrid::uniform(10));
        let ppd = DiscretePPD::new(vec![0.1; 10], grid);
        for y in [0.0, 0.05, 0.5, 0.999, 1.0] {
            assert!(ppd.loglik(y).abs() < 1e-12);
        }
    }

    #[test]
    fn two_bin_median_is_shared_edge() {
        let grid = Arc::new(BinGrid::from_edges(vec![0.0, 0.3, 1.0]).unwrap());
        let ppd = DiscretePPD::new(vec![0.5, 0.5], grid);
        assert!((ppd.quantile(0.5) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn cdf_quantile_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pool: Vec<f64> = (0..100_000).map(|_| rng.random::<f64>().powi(2)).collect();
        pool.push(1.0);
        let grid = Arc::new(BinGrid::from_pool(pool, 50).unwrap());
        let probs: Vec<f64> = (0..50).map(|_| rng.random::<f64>() + 1e-3).collect();
        let ppd = DiscretePPD::new(probs, grid);
        assert!((ppd.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for _ in 0..1000 {
            let y = rng.random_range(1e-6..1.0 - 1e-6);
            assert!((ppd.quantile(ppd.cdf(y)) - y).abs() < 1e-9);
        }
    }

    #[test]
    fn exceedance_on_support_bounds() {
        let grid = Arc::new(BinGrid::uniform(4));
        let ppd = DiscretePPD::new(vec![0.1, 0.2, 0.3, 0.4], grid);
        assert_eq!(ppd.exceed_prob(1.0), 0.0);
        assert_eq!(ppd.exceed_prob(0.0), 1.0);
        assert!((ppd.exceed_prob(0.75) - 0.4).abs() < 1e-15);
    }
}
