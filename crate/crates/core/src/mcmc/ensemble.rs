//! Affine-invariant ensemble sampler with the split-ensemble stretch move.

use rand::Rng;
use rand_distr::StandardNormal;

/// Draws `z` with density proportional to `1/sqrt(z)` on `[1/a, a]` by
/// inverting its CDF `F(z) = (sqrt(a z) - 1) / (a - 1)`.
#[inline]
pub fn draw_stretch_z<R: Rng + ?Sized>(rng: &mut R, a: f64) -> f64 {
    let u: f64 = rng.random();
    let s = (a - 1.0) * u + 1.0;
    s * s / a
}

/// CDF of the stretch distribution on `[1/a, a]`.
pub fn stretch_z_cdf(z: f64, a: f64) -> f64 {
    if z <= 1.0 / a {
        0.0
    } else if z >= a {
        1.0
    } else {
        ((a * z).sqrt() - 1.0) / (a - 1.0)
    }
}

/// Log acceptance ratio of a stretch proposal in `dim` dimensions.
#[inline]
pub fn stretch_log_accept(z: f64, dim: usize, log_prob_new: f64, log_prob_old: f64) -> f64 {
    if log_prob_new == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    (dim as f64 - 1.0) * z.ln() + log_prob_new - log_prob_old
}

/// Walker positions plus their cached log densities.
#[derive(Debug, Clone)]
pub struct Ensemble {
    dim: usize,
    positions: Vec<f64>,
    log_probs: Vec<f64>,
}

impl Ensemble {
    /// `positions` is row-major `nwalkers x dim`.
    pub fn new<F>(dim: usize, positions: Vec<f64>, target: F) -> Self
    where
        F: Fn(&[f64]) -> f64,
    {
        assert!(dim > 0 && positions.len() % dim == 0, "positions must be nwalkers x dim");
        let log_probs = positions.chunks_exact(dim).map(&target).collect();
        Self { dim, positions, log_probs }
    }

    /// Jitters `center` with i.i.d. `Normal(0, scale^2)` noise per coordinate,
    /// redrawing a walker until its log density is finite.
    pub fn around<R, F>(
        rng: &mut R,
        center: &[f64],
        nwalkers: usize,
        scale: f64,
        max_tries: usize,
        target: F,
    ) -> Option<Self>
    where
        R: Rng + ?Sized,
        F: Fn(&[f64]) -> f64,
    {
        let dim = center.len();
        let mut positions = Vec::with_capacity(nwalkers * dim);
        let mut log_probs = Vec::with_capacity(nwalkers);
        let mut walker = vec![0.0; dim];
        for _ in 0..nwalkers {
            let mut found = false;
            for _ in 0..max_tries {
                for (w, &c) in walker.iter_mut().zip(center) {
                    let z: f64 = rng.sample(StandardNormal);
                    *w = c + scale * z;
                }
                let lp = target(&walker);
                if lp.is_finite() {
                    positions.extend_from_slice(&walker);
                    log_probs.push(lp);
                    found = true;
                    break;
                }
            }
            if !found {
                return None;
            }
        }
        Some(Self { dim, positions, log_probs })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nwalkers(&self) -> usize {
        self.log_probs.len()
    }

    pub fn walker(&self, j: usize) -> &[f64] {
        &self.positions[j * self.dim..(j + 1) * self.dim]
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    /// One full stretch-move sweep: the first half of the walkers moves
    /// using the second half as companions, then the second half moves
    /// against the updated first half. Returns the number of accepted
    /// proposals.
    pub fn sweep<R, F>(&mut self, rng: &mut R, stretch_scale: f64, target: F) -> usize
    where
        R: Rng + ?Sized,
        F: Fn(&[f64]) -> f64,
    {
        let n = self.nwalkers();
        let half = n / 2;
        let mut accepted = 0;
        let mut proposal = vec![0.0; self.dim];
        for (active, companions) in [(0..half, half..n), (half..n, 0..half)] {
            for j in active {
                let k = rng.random_range(companions.clone());
                let z = draw_stretch_z(rng, stretch_scale);
                {
                    let xj = self.walker(j);
                    let xk = self.walker(k);
                    for ((p, &a), &b) in proposal.iter_mut().zip(xj).zip(xk) {
                        *p = b + z * (a - b);
                    }
                }
                let lp_new = target(&proposal);
                let log_ratio = stretch_log_accept(z, self.dim, lp_new, self.log_probs[j]);
                let u: f64 = rng.random();
                if u.ln() < log_ratio {
                    self.positions[j * self.dim..(j + 1) * self.dim].copy_from_slice(&proposal);
                    self.log_probs[j] = lp_new;
                    accepted += 1;
                }
            }
        }
        accepted
    }
}
