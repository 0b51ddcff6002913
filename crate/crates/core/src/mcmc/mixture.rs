//! Equal-weight Gaussian mixture representation of a sampled PPD.

use std::f64::consts::{PI, SQRT_2};

/// Standard normal CDF.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// `log(sum(exp(xs)))`, stable; `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// One Gaussian per retained posterior sample, each with weight `1/S`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixturePPD {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

impl MixturePPD {
    pub fn new(means: Vec<f64>, variances: Vec<f64>) -> Self {
        assert_eq!(means.len(), variances.len());
        assert!(!means.is_empty(), "mixture needs at least one component");
        debug_assert!(variances.iter().all(|&v| v > 0.0));
        Self { means, variances }
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.means.iter().sum::<f64>() / self.len() as f64
    }

    pub fn logpdf(&self, y: f64) -> f64 {
        let terms = self.means.iter().zip(&self.variances).map(move |(&mu, &var)| {
            let r = y - mu;
            -0.5 * (2.0 * PI * var).ln() - r * r / (2.0 * var)
        });
        log_sum_exp(terms) - (self.len() as f64).ln()
    }

    pub fn cdf(&self, y: f64) -> f64 {
        if y == f64::NEG_INFINITY {
            return 0.0;
        }
        if y == f64::INFINITY {
            return 1.0;
        }
        let s: f64 = self
            .means
            .iter()
            .zip(&self.variances)
            .map(|(&mu, &var)| normal_cdf((y - mu) / var.sqrt()))
            .sum();
        (s / self.len() as f64).clamp(0.0, 1.0)
    }

    /// CDF inverse by bisection, to `1e-8` in `y`.
    pub fn quantile(&self, q: f64) -> f64 {
        assert!(q > 0.0 && q < 1.0, "quantile level must be in (0, 1)");
        let (mut lo, mut hi) = self
            .means
            .iter()
            .zip(&self.variances)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&mu, &var)| {
                let sd = var.sqrt();
                (lo.min(mu - 40.0 * sd), hi.max(mu + 40.0 * sd))
            });
        while hi - lo > 1e-8 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.cdf(mid) < q {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    pub fn exceed_prob(&self, threshold: f64) -> f64 {
        1.0 - self.cdf(threshold)
    }
}
