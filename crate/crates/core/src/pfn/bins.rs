//! Prior-equiprobable discretization of `[0, 1]`.

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::PfnError;
use crate::prior::PriorSampler;

/// Minimum gap enforced between collapsed neighbouring edges.
pub const EDGE_SEPARATION: f64 = 1e-9;

/// Bin edges over `[0, 1]`: `edges[0] = 0`, `edges[nbins] = 1`, strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinGrid {
    edges: Vec<f64>,
}

impl BinGrid {
    pub fn from_edges(edges: Vec<f64>) -> Result<Self, PfnError> {
        if edges.len() < 3 {
            return Err(PfnError::InvalidGrid("need at least two bins".into()));
        }
        if edges[0] != 0.0 || *edges.last().unwrap() != 1.0 {
            return Err(PfnError::InvalidGrid("edges must start at 0 and end at 1".into()));
        }
        if edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(PfnError::InvalidGrid("edges must be strictly increasing".into()));
        }
        Ok(Self { edges })
    }

    pub fn uniform(nbins: usize) -> Self {
        let mut edges: Vec<f64> = (0..=nbins).map(|i| i as f64 / nbins as f64).collect();
        edges[nbins] = 1.0;
        Self { edges }
    }

    /// Interior edges at the empirical `i / nbins` quantiles of `pool`
    /// (values clamped to `[0, 1]`). Collapsed edges are pushed apart by
    /// [`EDGE_SEPARATION`]; more than 1% separated edges is an error.
    pub fn from_pool(mut pool: Vec<f64>, nbins: usize) -> Result<Self, PfnError> {
        if nbins < 2 {
            return Err(PfnError::InvalidGrid("nbins must be >= 2".into()));
        }
        if pool.is_empty() {
            return Err(PfnError::InvalidGrid("empty value pool".into()));
        }
        for v in &mut pool {
            if v.is_nan() {
                return Err(PfnError::InvalidGrid("NaN in value pool".into()));
            }
            *v = v.clamp(0.0, 1.0);
        }
        pool.sort_by(f64::total_cmp);
        let n = pool.len();
        let mut edges = Vec::with_capacity(nbins + 1);
        edges.push(0.0);
        for i in 1..nbins {
            // Linear interpolation between order statistics.
            let pos = i as f64 / nbins as f64 * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            let frac = pos - lo as f64;
            edges.push(pool[lo] + frac * (pool[hi] - pool[lo]));
        }
        edges.push(1.0);

        let mut moved = vec![false; nbins + 1];
        for i in 1..nbins {
            if edges[i] < edges[i - 1] + EDGE_SEPARATION {
                edges[i] = edges[i - 1] + EDGE_SEPARATION;
                moved[i] = true;
            }
        }
        for i in (1..nbins).rev() {
            if edges[i] > edges[i + 1] - EDGE_SEPARATION {
                edges[i] = edges[i + 1] - EDGE_SEPARATION;
                moved[i] = true;
            }
        }
        let separated = moved.iter().filter(|&&m| m).count();
        if separated > 0 {
            warn!("separated {separated} collapsed bin edges");
        }
        if separated * 100 > nbins + 1 {
            return Err(PfnError::DegenerateGrid { separated, edges: nbins + 1 });
        }
        Self::from_edges(edges)
    }

    pub fn nbins(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn width(&self, bin: usize) -> f64 {
        self.edges[bin + 1] - self.edges[bin]
    }

    /// Index of the bin containing `y`, after clamping `y` to `[0, 1]`.
    pub fn bin_of(&self, y: f64) -> usize {
        let y = if y.is_nan() { 0.0 } else { y.clamp(0.0, 1.0) };
        // Number of edges <= y, minus one, limited to the last bin.
        let idx = self.edges.partition_point(|&e| e <= y);
        idx.saturating_sub(1).min(self.nbins() - 1)
    }
}

/// Builds a grid from `n_draws` noisy prior curves, pooling every step.
pub fn build_bins<R: Rng + ?Sized>(
    sampler: &PriorSampler,
    rng: &mut R,
    n_draws: usize,
    nbins: usize,
) -> Result<BinGrid, PfnError> {
    if n_draws < 100 * nbins {
        return Err(PfnError::InvalidConfig(format!("need at least {} prior draws for {nbins} bins, got {n_draws}", 100 * nbins)));
    }
    let mut pool = Vec::with_capacity(n_draws * sampler.curve_length());
    for _ in 0..n_draws {
        pool.extend(sampler.sample(rng)?.y);
    }
    BinGrid::from_pool(pool, nbins)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_pool_gives_uniform_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pool: Vec<f64> = (0..1_000_000).map(|_| rng.random::<f64>()).collect();
        let grid = BinGrid::from_pool(pool, 1000).unwrap();
        for (i, e) in grid.edges().iter().enumerate() {
            assert!((e - i as f64 / 1000.0).abs() < 2e-3);
        }
    }

    #[test]
    fn collapsed_edges_are_separated() {
        // 0.5% of mass piled at exactly zero: about five edges collapse.
        let mut pool: Vec<f64> = (0..99_500).map(|i| i as f64 / 99_500.0).collect();
        pool.extend(std::iter::repeat(-0.3).take(500));
        let grid = BinGrid::from_pool(pool, 1000).unwrap();
        assert!(grid.edges().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn edges_moved_twice_count_once() {
        // 0.6% of mass at exactly one: six interior edges collapse onto it.
        let mut pool: Vec<f64> = (0..99_400).map(|i| i as f64 / 99_400.0).collect();
        pool.extend(std::iter::repeat(1.4).take(600));
        let grid = BinGrid::from_pool(pool, 1000).unwrap();
        let tiny = grid.edges().windows(2).filter(|w| w[1] - w[0] < 1e-8).count();
        assert!((5..=7).contains(&tiny), "{tiny}");
    }

    #[test]
    fn heavily_degenerate_pool_is_rejected() {
        let pool = vec![0.5; 10_000];
        assert!(matches!(BinGrid::from_pool(pool, 100), Err(PfnError::DegenerateGrid { .. })));
    }

    #[test]
    fn bin_lookup() {
        let g = BinGrid::uniform(4);
        assert_eq!(g.bin_of(0.0), 0);
        assert_eq!(g.bin_of(0.25), 1);
        assert_eq!(g.bin_of(0.2499), 0);
        assert_eq!(g.bin_of(1.0), 3);
        assert_eq!(g.bin_of(1.7), 3);
        assert_eq!(g.bin_of(-0.2), 0);
    }

    #[test]
    fn edge_validation() {
        assert!(BinGrid::from_edges(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(BinGrid::from_edges(vec![0.1, 0.5, 1.0]).is_err());
        assert!(BinGrid::from_edges(vec![0.0, 0.5, 1.0]).is_ok());
    }

    #[test]
    fn build_bins_requires_enough_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sampler = PriorSampler::new(20);
        assert!(build_bins(&sampler, &mut rng, 99, 10).is_err());
        let grid = build_bins(&sampler, &mut rng, 1000, 10).unwrap();
        assert_eq!(grid.nbins(), 10);
    }
}
