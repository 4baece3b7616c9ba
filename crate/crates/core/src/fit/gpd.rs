use serde::{Deserialize, Serialize};

use super::nelder_mead::{nelder_mead, NelderMeadOptions};
use crate::error::{Error, Result};

/// Minimum number of exceedances accepted by [`fit_gpd`] by default.
pub const MIN_EXCEEDANCES: usize = 30;

/// Generalized Pareto fit to the excesses over a threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpdFit {
    pub xi: f64,
    pub sigma: f64,
    pub threshold: f64,
    /// Fraction of the values above the threshold.
    pub zeta_u: f64,
    pub n_exceed: usize,
}

/// Shape values closer to zero than this use the exponential limit.
const XI_EXPONENTIAL: f64 = 1e-6;

/// GPD log-likelihood of the excesses `y > 0`.
pub fn gpd_loglik(xi: f64, sigma: f64, excesses: &[f64]) -> f64 {
    if !(sigma > 0.0) {
        return f64::NEG_INFINITY;
    }
    let n = excesses.len() as f64;
    if xi.abs() < XI_EXPONENTIAL {
        return -n * sigma.ln() - excesses.iter().sum::<f64>() / sigma;
    }
    let mut acc = 0.0;
    for &y in excesses {
        let t = 1.0 + xi * y / sigma;
        if t <= 0.0 {
            return f64::NEG_INFINITY;
        }
        acc += t.ln();
    }
    -n * sigma.ln() - (1.0 + 1.0 / xi) * acc
}

pub fn fit_gpd(values: &[f64], threshold: f64) -> Result<GpdFit> {
    fit_gpd_with_floor(values, threshold, MIN_EXCEEDANCES)
}

/// Maximum-likelihood GPD fit requiring at least `min_exceed` exceedances.
pub fn fit_gpd_with_floor(values: &[f64], threshold: f64, min_exceed: usize) -> Result<GpdFit> {
    let excesses: Vec<f64> = values
        .iter()
        .filter(|&&v| v > threshold)
        .map(|&v| v - threshold)
        .collect();
    let n = excesses.len();
    if n < min_exceed.max(2) {
        return Err(Error::InsufficientExceedances {
            found: n,
            required: min_exceed.max(2),
        });
    }
    let mean = excesses.iter().sum::<f64>() / n as f64;
    let var = excesses.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    if !(var > 0.0) {
        return Err(Error::Domain("excesses have zero variance".into()));
    }
    // Moment estimates as the starting point.
    let xi0 = (0.5 * (1.0 - mean * mean / var)).clamp(-0.4, 0.4);
    let sigma0 = mean * (1.0 - xi0);
    let scale = sigma0;
    let negloglik = |z: &[f64]| -gpd_loglik(z[1], scale * z[0].exp(), &excesses);
    let opts = NelderMeadOptions {
        ftol: 1e-12,
        xtol: 1e-8,
        max_evals: 5000,
        initial_step: 0.2,
    };
    let mut best = nelder_mead(negloglik, &[0.0, xi0], &opts);
    for xi_start in [0.5f64, 1.0, -0.2] {
        let r = nelder_mead(
            negloglik,
            &[
                (mean * (1.0 - xi_start.min(0.9)) / scale).ln().max(-5.0),
                xi_start,
            ],
            &opts,
        );
        if r.value < best.value {
            best = r;
        }
    }
    if !best.converged || !best.value.is_finite() {
        return Err(Error::NonConvergence {
            message: "GPD likelihood maximization failed".into(),
            starts: Vec::new(),
        });
    }
    Ok(GpdFit {
        xi: best.x[1],
        sigma: scale * best.x[0].exp(),
        threshold,
        zeta_u: n as f64 / values.len() as f64,
        n_exceed: n,
    })
}

/// Empirical quantile with the order-statistic convention `x_(⌈qN⌉)`.
pub fn empirical_quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = (q * sorted.len() as f64).ceil() as usize;
    sorted[k.clamp(1, sorted.len()) - 1]
}

/// GPD fits over increasing thresholds set at the given quantiles; failed fits are skipped.
pub fn threshold_stability(values: &[f64], quantiles: &[f64]) -> Vec<GpdFit> {
    quantiles
        .iter()
        .filter_map(|&q| fit_gpd(values, empirical_quantile(values, q)).ok())
        .collect()
}
