//! Starting points for the sampler: a fixed default, per-basis least
//! squares, and a simplex MAP search.

use crate::prior::{
    log_prior_density, CurveConfiguration, Ilog2Params, JanoschekParams, LogNormalPrior, Pow3Params, UniformPrior,
    ILOG2_A_PRIOR, ILOG2_C_PRIOR, JANOSCHEK_ALPHA_PRIOR, JANOSCHEK_BETA_PRIOR, JANOSCHEK_DELTA_PRIOR,
    JANOSCHEK_KAPPA_PRIOR, NUM_BASIS, POW3_ALPHA_PRIOR, POW3_A_PRIOR, POW3_C_PRIOR,
};

use super::{from_chain, to_chain, CurvePosterior};

/// Evaluation budget of the MAP simplex search.
pub const MAP_MAX_EVALUATIONS: usize = 2000;

/// Floor on the LSE noise variance.
const MIN_LSE_SIGMA2: f64 = 6.144_212_353_328_21e-6; // e^-12

/// Half-width of the log-space fitting box, in prior standard deviations.
const LOG_BOX_STDS: f64 = 4.0;

/// Fixed, feasible starting configuration.
///
/// Panics if the point is outside the prior's support for `m`, which can
/// only happen through a bug in the prior code.
pub fn init_default(m: usize) -> CurveConfiguration {
    let third = 1.0 / NUM_BASIS as f64;
    let xi = CurveConfiguration {
        weights: [third; NUM_BASIS],
        pow3: Pow3Params { c: 0.8, a: 0.3, alpha: 1.0 },
        janoschek: JanoschekParams { alpha: 0.8, beta: 0.2, kappa: (-2.0f64).exp(), delta: 1.0 },
        ilog2: Ilog2Params { c: 0.8, a: 0.3 },
        sigma2: (-8.0f64).exp(),
    };
    assert!(
        log_prior_density(&xi, m.max(2)).is_finite(),
        "default starting point violates the prior constraints for m = {m}"
    );
    xi
}

/// Result of [`bounded_least_squares`].
#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquaresFit {
    pub params: Vec<f64>,
    /// Sum of squared residuals at `params`.
    pub cost: f64,
    pub iterations: usize,
}

/// Box-constrained Levenberg-Marquardt with a central-difference Jacobian.
/// Steps are projected back onto `[lower, upper]`.
pub fn bounded_least_squares<F>(
    residuals: F,
    nres: usize,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    max_iter: usize,
) -> LeastSquaresFit
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = x0.len();
    assert!(lower.len() == n && upper.len() == n);
    let project = |x: &mut [f64]| {
        for ((v, &lo), &hi) in x.iter_mut().zip(lower).zip(upper) {
            *v = v.clamp(lo, hi);
        }
    };
    let mut x = x0.to_vec();
    project(&mut x);

    let mut r = vec![0.0; nres];
    let sq = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>();
    residuals(&x, &mut r);
    let mut cost = sq(&r);
    if !cost.is_finite() {
        return LeastSquaresFit { params: x, cost: f64::INFINITY, iterations: 0 };
    }

    let mut jac = vec![0.0; nres * n];
    let mut r_plus = vec![0.0; nres];
    let mut r_minus = vec![0.0; nres];
    let mut trial = vec![0.0; n];
    let mut trial_r = vec![0.0; nres];
    let mut lambda = 1e-3;
    let mut iterations = 0;

    for it in 0..max_iter {
        iterations = it + 1;
        // Jacobian, column j in jac[i * n + j].
        for j in 0..n {
            let h = 1e-6 * x[j].abs().max(1.0);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] = (x[j] + h).min(upper[j]);
            xm[j] = (x[j] - h).max(lower[j]);
            let span = xp[j] - xm[j];
            if span <= 0.0 {
                for i in 0..nres {
                    jac[i * n + j] = 0.0;
                }
                continue;
            }
            residuals(&xp, &mut r_plus);
            residuals(&xm, &mut r_minus);
            for i in 0..nres {
                jac[i * n + j] = (r_plus[i] - r_minus[i]) / span;
            }
        }
        let mut jtj = vec![0.0; n * n];
        let mut jtr = vec![0.0; n];
        for i in 0..nres {
            let row = &jac[i * n..(i + 1) * n];
            for a in 0..n {
                jtr[a] += row[a] * r[i];
                for b in 0..=a {
                    jtj[a * n + b] += row[a] * row[b];
                }
            }
        }
        for a in 0..n {
            for b in 0..a {
                jtj[b * n + a] = jtj[a * n + b];
            }
        }
        let grad_norm = jtr.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if grad_norm < 1e-15 || cost < 1e-30 {
            break;
        }

        let mut improved = false;
        for _ in 0..30 {
            let mut a_mat = jtj.clone();
            for d in 0..n {
                a_mat[d * n + d] += lambda * (jtj[d * n + d] + 1e-12);
            }
            let rhs: Vec<f64> = jtr.iter().map(|v| -v).collect();
            let Some(step) = solve_spd(&a_mat, &rhs, n) else {
                lambda *= 10.0;
                continue;
            };
            for ((t, &xv), &s) in trial.iter_mut().zip(&x).zip(&step) {
                *t = xv + s;
            }
            project(&mut trial);
            residuals(&trial, &mut trial_r);
            let trial_cost = sq(&trial_r);
            if trial_cost.is_finite() && trial_cost < cost {
                let rel = (cost - trial_cost) / cost.max(1e-300);
                x.copy_from_slice(&trial);
                r.copy_from_slice(&trial_r);
                cost = trial_cost;
                lambda = (lambda / 3.0).max(1e-12);
                improved = true;
                if rel < 1e-14 {
                    return LeastSquaresFit { params: x, cost, iterations };
                }
                break;
            }
            lambda *= 4.0;
        }
        if !improved {
            break;
        }
    }
    LeastSquaresFit { params: x, cost, iterations }
}

/// Cholesky solve of a symmetric positive definite `n x n` system.
fn solve_spd(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i * n + k] * y[k]).sum();
        y[i] = (b[i] - s) / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k * n + i] * x[k]).sum();
        x[i] = (y[i] - s) / l[i * n + i];
    }
    Some(x)
}

fn uniform_box(p: &UniformPrior) -> (f64, f64) {
    (p.low, p.high)
}

fn log_box(p: &LogNormalPrior) -> (f64, f64) {
    let w = LOG_BOX_STDS * p.std_dev();
    (p.mean - w, p.mean + w)
}

fn best_fit<F>(residuals: F, nres: usize, starts: &[Vec<f64>], bounds: &[(f64, f64)]) -> LeastSquaresFit
where
    F: Fn(&[f64], &mut [f64]),
{
    let lower: Vec<f64> = bounds.iter().map(|b| b.0).collect();
    let upper: Vec<f64> = bounds.iter().map(|b| b.1).collect();
    starts
        .iter()
        .map(|s| bounded_least_squares(&residuals, nres, s, &lower, &upper, 200))
        .min_by(|a, b| a.cost.total_cmp(&b.cost))
        .expect("at least one start")
}

/// Least-squares fit of `c - a t^-alpha` over `(c, a, ln alpha)`.
pub(crate) fn fit_pow3(y: &[f64]) -> (Pow3Params, f64) {
    let ln_t: Vec<f64> = (1..=y.len()).map(|t| (t as f64).ln()).collect();
    let res = |p: &[f64], out: &mut [f64]| {
        let alpha = p[2].exp();
        for ((o, &obs), &l) in out.iter_mut().zip(y).zip(&ln_t) {
            *o = p[0] - p[1] * (-alpha * l).exp() - obs;
        }
    };
    let bounds = [uniform_box(&POW3_C_PRIOR), uniform_box(&POW3_A_PRIOR), log_box(&POW3_ALPHA_PRIOR)];
    let last = *y.last().unwrap();
    let span = (last - y[0]).clamp(-0.6, 0.6);
    let starts = [vec![last, span, 0.0], vec![last, span, -1.5], vec![last, span, 1.5]];
    let fit = best_fit(res, y.len(), &starts, &bounds);
    let p = &fit.params;
    (Pow3Params { c: p[0], a: p[1], alpha: p[2].exp() }, fit.cost)
}

/// Least-squares fit of the Janoschek curve over `(alpha, beta, ln kappa, ln delta)`.
pub(crate) fn fit_janoschek(y: &[f64]) -> (JanoschekParams, f64) {
    let ln_t: Vec<f64> = (1..=y.len()).map(|t| (t as f64).ln()).collect();
    let res = |p: &[f64], out: &mut [f64]| {
        let (kappa, delta) = (p[2].exp(), p[3].exp());
        for ((o, &obs), &l) in out.iter_mut().zip(y).zip(&ln_t) {
            *o = p[0] - (p[0] - p[1]) * (-kappa * (delta * l).exp()).exp() - obs;
        }
    };
    let bounds = [
        uniform_box(&JANOSCHEK_ALPHA_PRIOR),
        uniform_box(&JANOSCHEK_BETA_PRIOR),
        log_box(&JANOSCHEK_KAPPA_PRIOR),
        log_box(&JANOSCHEK_DELTA_PRIOR),
    ];
    let last = y.last().unwrap().clamp(0.0, 1.0);
    let first = y[0].clamp(0.0, 2.0);
    let starts = [vec![last, first, -2.0, 0.0], vec![last, first, -4.0, 0.5], vec![last, first, 0.0, -0.5]];
    let fit = best_fit(res, y.len(), &starts, &bounds);
    let p = &fit.params;
    (JanoschekParams { alpha: p[0], beta: p[1], kappa: p[2].exp(), delta: p[3].exp() }, fit.cost)
}

/// Least-squares fit of `c - a / ln(t + 1)`.
pub(crate) fn fit_ilog2(y: &[f64]) -> (Ilog2Params, f64) {
    let inv: Vec<f64> = (1..=y.len()).map(|t| 1.0 / ((t + 1) as f64).ln()).collect();
    let res = |p: &[f64], out: &mut [f64]| {
        for ((o, &obs), &il) in out.iter_mut().zip(y).zip(&inv) {
            *o = p[0] - p[1] * il - obs;
        }
    };
    let bounds = [uniform_box(&ILOG2_C_PRIOR), uniform_box(&ILOG2_A_PRIOR)];
    let last = y.last().unwrap().clamp(0.0, 1.0);
    let starts = [vec![last, 0.0], vec![last, 0.25]];
    let fit = best_fit(res, y.len(), &starts, &bounds);
    (Ilog2Params { c: fit.params[0], a: fit.params[1] }, fit.cost)
}

/// Fits each basis curve to the prefix independently, sets the weights to
/// `1/K` and the noise to the residual mean square of the combination.
/// Falls back to [`init_default`] if the assembled point is infeasible.
pub fn init_lse(y_prefix: &[f64], t_obs: usize, m: usize) -> CurveConfiguration {
    assert!(t_obs >= 2 && t_obs <= y_prefix.len(), "LSE init needs 2 <= T <= len(y)");
    let y = &y_prefix[..t_obs];
    if y.iter().any(|v| !v.is_finite()) {
        return init_default(m);
    }
    let (pow3, _) = fit_pow3(y);
    let (janoschek, _) = fit_janoschek(y);
    let (ilog2, _) = fit_ilog2(y);
    let third = 1.0 / NUM_BASIS as f64;
    let mut xi = CurveConfiguration { weights: [third; NUM_BASIS], pow3, janoschek, ilog2, sigma2: 1.0 };
    let rms = y
        .iter()
        .enumerate()
        .map(|(i, &obs)| (obs - xi.comb_unchecked(i + 1)).powi(2))
        .sum::<f64>()
        / t_obs as f64;
    xi.sigma2 = rms.max(MIN_LSE_SIGMA2);
    if log_prior_density(&xi, m).is_finite() {
        xi
    } else {
        init_default(m)
    }
}

/// Nelder-Mead minimization with dimension-adaptive coefficients.
/// Non-finite objective values are treated as `+inf`. Returns the best
/// point and its value after at most `max_evals` evaluations.
pub fn nelder_mead<F>(f: F, x0: &[f64], step: f64, max_evals: usize) -> (Vec<f64>, f64)
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    let nf = n as f64;
    let (alpha, gamma, rho, sigma) = (1.0, 1.0 + 2.0 / nf, 0.75 - 1.0 / (2.0 * nf), 1.0 - 1.0 / nf);
    let evals = std::cell::Cell::new(0usize);
    let eval = |x: &[f64]| {
        evals.set(evals.get() + 1);
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v)).collect();

    while evals.get() < max_evals {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = values[n] - values[0];
        if values[0].is_finite() && spread.abs() < 1e-12 * values[0].abs().max(1e-12) {
            break;
        }

        let mut centroid = vec![0.0; n];
        for v in &simplex[..n] {
            for (c, &x) in centroid.iter_mut().zip(v) {
                *c += x / nf;
            }
        }
        let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&simplex[n]).map(|(&c, &w)| c + t * (w - c)).collect() };

        let xr = along(-alpha);
        let fr = eval(&xr);
        if fr < values[0] {
            let xe = along(-alpha * gamma);
            let fe = eval(&xe);
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < values[n] {
            let xc = along(-alpha * rho);
            let fc = eval(&xc);
            (xc, fc)
        } else {
            let xc = along(rho);
            let fc = eval(&xc);
            (xc, fc)
        };
        if fc < values[n].min(fr) {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        // Shrink towards the best vertex.
        for i in 1..=n {
            let shrunk: Vec<f64> = simplex[0].iter().zip(&simplex[i]).map(|(&b, &x)| b + sigma * (x - b)).collect();
            values[i] = eval(&shrunk);
            simplex[i] = shrunk;
            if evals.get() >= max_evals {
                break;
            }
        }
    }
    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    (simplex[best].clone(), values[best])
}

/// Simplex search for the posterior mode, started from [`init_default`].
/// The search runs in chain coordinates; the objective is the posterior
/// density over natural parameters.
pub fn init_map(y_prefix: &[f64], t_obs: usize, m: usize) -> CurveConfiguration {
    assert!(t_obs >= 2 && t_obs <= y_prefix.len(), "MAP init needs 2 <= T <= len(y)");
    let start = init_default(m);
    let posterior = CurvePosterior::new(&y_prefix[..t_obs], m);
    let objective = |x: &[f64]| -posterior.log_posterior(&from_chain(x));
    let start_value = objective(&to_chain(&start));

    // Spend the budget over successive restarts from the incumbent, which
    // re-inflates a collapsed simplex.
    let mut best = to_chain(&start).to_vec();
    let mut best_value = start_value;
    let mut remaining = MAP_MAX_EVALUATIONS;
    let mut step = 0.1;
    while remaining > 2 * (best.len() + 1) {
        let budget = remaining.min(MAP_MAX_EVALUATIONS / 2);
        let (x, v) = nelder_mead(&objective, &best, step, budget);
        remaining -= budget;
        if v < best_value {
            best = x;
            best_value = v;
        }
        step *= 0.5;
    }
    if best_value <= start_value && best_value.is_finite() {
        from_chain(&best)
    } else {
        start
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcmc::log_posterior;
    use crate::prior::log_likelihood;

    #[test]
    fn default_point_is_feasible_and_increasing() {
        let a = init_default(100);
        let b = init_default(100);
        assert_eq!(a, b);
        assert!(log_prior_density(&a, 100).is_finite());
        let (first, last) = (a.comb_unchecked(1), a.comb_unchecked(100));
        // Evaluated once with an independent calculator.
        assert!((first - 0.381_045_892_212_480_4).abs() < 1e-12, "{first}");
        assert!((last - 0.777_331_828_315_413_5).abs() < 1e-12, "{last}");
        assert!(first < last);
    }

    #[test]
    fn least_squares_recovers_pure_pow3() {
        let truth = Pow3Params { c: 0.85, a: 0.45, alpha: 0.6 };
        let y: Vec<f64> = (1..=30).map(|t| truth.eval(t).unwrap()).collect();
        let (fit, cost) = fit_pow3(&y);
        let rms = (cost / y.len() as f64).sqrt();
        assert!(rms < 1e-6, "rms {rms}, fit {fit:?}");
        assert!((fit.c - truth.c).abs() < 1e-4 && (fit.alpha - truth.alpha).abs() < 1e-3);
    }

    #[test]
    fn least_squares_respects_bounds() {
        // A line far above the allowed level: c must saturate at its bound.
        let y = vec![3.0; 10];
        let (fit, _) = fit_ilog2(&y);
        assert_eq!(fit.c, 1.0);
    }

    #[test]
    fn spd_solver() {
        let a = [4.0, 1.0, 1.0, 3.0];
        let x = solve_spd(&a, &[1.0, 2.0], 2).unwrap();
        assert!((4.0 * x[0] + x[1] - 1.0).abs() < 1e-14 && (x[0] + 3.0 * x[1] - 2.0).abs() < 1e-14);
        assert!(solve_spd(&[0.0, 0.0, 0.0, 0.0], &[1.0, 1.0], 2).is_none());
    }

    #[test]
    fn lse_falls_back_on_infeasible_fits() {
        // Constant prefix: all fits are flat and the combination cannot increase.
        let y = vec![0.4; 10];
        assert_eq!(init_lse(&y, 10, 100), init_default(100));
        // Decreasing prefix.
        let y: Vec<f64> = (0..10).map(|i| 0.9 - 0.05 * i as f64).collect();
        assert_eq!(init_lse(&y, 10, 100), init_default(100));
    }

    #[test]
    fn lse_on_increasing_prefix_is_feasible() {
        let y: Vec<f64> = (1..=10).map(|t| 0.8 - 0.5 * (t as f64).powf(-0.7)).collect();
        let xi = init_lse(&y, 10, 100);
        assert!(log_prior_density(&xi, 100).is_finite());
        assert!(xi.sigma2 >= MIN_LSE_SIGMA2);
    }

    #[test]
    fn nelder_mead_minimizes_rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let (x, v) = nelder_mead(f, &[-1.2, 1.0], 0.5, 5000);
        assert!(v < 1e-8, "{v} at {x:?}");
    }

    #[test]
    fn map_improves_on_default_and_is_deterministic() {
        let truth = CurveConfiguration {
            weights: [0.3, 0.4, 0.3],
            pow3: Pow3Params { c: 0.7, a: 0.3, alpha: 0.8 },
            janoschek: JanoschekParams { alpha: 0.75, beta: 0.2, kappa: 0.3, delta: 0.9 },
            ilog2: Ilog2Params { c: 0.7, a: 0.2 },
            sigma2: (-8.0f64).exp(),
        };
        let y = truth.curve(100);
        let a = init_map(&y, 20, 100);
        let b = init_map(&y, 20, 100);
        assert_eq!(a, b);
        let lp_map = log_posterior(&a, &y, 20, 100);
        let lp_default = log_posterior(&init_default(100), &y, 20, 100);
        assert!(lp_map >= lp_default);
        // Noiseless prefix: the mode fits at least as well as the generator, up to 1%.
        let ll_map = log_likelihood(&a, &y, 20).unwrap();
        let ll_truth = log_likelihood(&truth, &y, 20).unwrap();
        assert!(ll_map >= ll_truth - 0.01 * ll_truth.abs(), "{ll_map} vs {ll_truth}");
    }
}
