use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::optimize::{optimize, FitOptions, FreeParams, GodambeEstimate};
use crate::error::{Error, Result};
use crate::objectives::{ExceedanceSet, Objective};
use crate::variogram::{Location, VariogramParams};

/// Relative finite-difference step for the sandwich matrices.
pub const DEFAULT_REL_STEP: f64 = 1e-4;

/// Step used for the censored likelihood, whose QMC error swamps smaller steps.
pub const CENSORED_REL_STEP: f64 = 1e-2;

fn steps(values: &[f64], rel: f64) -> Vec<f64> {
    values.iter().map(|v| rel * v.abs().max(0.1)).collect()
}

fn per_event_at(
    objective: &Objective,
    sites: &[Location],
    exc: &ExceedanceSet,
    free: FreeParams,
    base: &VariogramParams,
    values: &[f64],
) -> Result<DVector<f64>> {
    let p = free.with_values(base, values);
    p.validate().map_err(|e| {
        Error::Precondition(format!(
            "finite-difference point leaves the parameter space: {e}"
        ))
    })?;
    let v = objective.per_event(&p, sites, exc)?;
    if let Some(m) = v.iter().position(|t| !t.is_finite()) {
        return Err(Error::Domain(format!(
            "event {m} has a non-finite contribution"
        )));
    }
    Ok(DVector::from_vec(v))
}

/// Per-event gradients (columns) and mean per-event Hessian by central differences.
fn derivatives(
    objective: &Objective,
    sites: &[Location],
    exc: &ExceedanceSet,
    free: FreeParams,
    theta: &VariogramParams,
    rel_step: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let x0 = free.values(theta);
    let d = x0.len();
    let h = steps(&x0, rel_step);
    let shifted = |moves: &[(usize, f64)]| {
        let mut x = x0.clone();
        for &(k, s) in moves {
            x[k] += s * h[k];
        }
        x
    };
    let mut points: Vec<Vec<f64>> = vec![x0.clone()];
    for i in 0..d {
        points.push(shifted(&[(i, 1.0)]));
        points.push(shifted(&[(i, -1.0)]));
    }
    for i in 0..d {
        for j in i + 1..d {
            for (si, sj) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                points.push(shifted(&[(i, si), (j, sj)]));
            }
        }
    }
    let values: Vec<DVector<f64>> = points
        .par_iter()
        .map(|x| per_event_at(objective, sites, exc, free, theta, x))
        .collect::<Result<_>>()?;
    let n = exc.len();
    let f0 = &values[0];
    let mut grads = DMatrix::zeros(d, n);
    let mut hess = DMatrix::zeros(d, d);
    for i in 0..d {
        let (fp, fm) = (&values[1 + 2 * i], &values[2 + 2 * i]);
        for m in 0..n {
            grads[(i, m)] = (fp[m] - fm[m]) / (2.0 * h[i]);
        }
        hess[(i, i)] = (fp.sum() - 2.0 * f0.sum() + fm.sum()) / (h[i] * h[i] * n as f64);
    }
    let mut idx = 1 + 2 * d;
    for i in 0..d {
        for j in i + 1..d {
            let s: Vec<f64> = (0..4).map(|q| values[idx + q].sum()).collect();
            let v = (s[0] - s[1] - s[2] + s[3]) / (4.0 * h[i] * h[j] * n as f64);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
            idx += 4;
        }
    }
    Ok((grads, hess))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

/// Sandwich information `G = K J⁻¹ K` at `theta`.
///
/// `J` is the mean outer product of per-event gradients and `K` the mean
/// per-event Hessian. Standard errors are `sqrt(diag(G⁻¹) / N_u)`.
pub fn godambe(
    objective: &Objective,
    sites: &[Location],
    exc: &ExceedanceSet,
    theta: &VariogramParams,
    free: FreeParams,
    rel_step: f64,
) -> Result<GodambeEstimate> {
    let n = exc.len();
    if n < 2 {
        return Err(Error::InsufficientExceedances {
            found: n,
            required: 2,
        });
    }
    let (grads, k) = derivatives(objective, sites, exc, free, theta, rel_step)?;
    let j = &grads * grads.transpose() / n as f64;
    let k_inv = k
        .clone()
        .try_inverse()
        .filter(|m| m.iter().all(|v| v.is_finite()));
    let eig = k.clone().symmetric_eigen().eigenvalues;
    let scale = eig.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let Some(k_inv) = k_inv.filter(|_| eig.iter().all(|v| v.abs() > 1e-12 * scale) && scale > 0.0)
    else {
        return Err(Error::SingularHessian {
            eigenvalues: eig.iter().copied().collect(),
        });
    };
    let cov = &k_inv * &j * k_inv.transpose();
    let g = cov.clone().try_inverse().unwrap_or_else(|| {
        let j_inv = j
            .clone()
            .pseudo_inverse(1e-12)
            .unwrap_or_else(|_| DMatrix::zeros(j.nrows(), j.ncols()));
        &k * j_inv * &k
    });
    let se = (0..cov.nrows())
        .map(|i| (cov[(i, i)].max(0.0) / n as f64).sqrt())
        .collect();
    Ok(GodambeEstimate {
        params: free.names().iter().map(|s| s.to_string()).collect(),
        j: rows(&j),
        k: rows(&k),
        g: rows(&g),
        se,
    })
}

/// Step suited to the objective.
pub fn default_rel_step(objective: &Objective) -> f64 {
    if objective.is_censored() {
        CENSORED_REL_STEP
    } else {
        DEFAULT_REL_STEP
    }
}

/// Contiguous block boundaries over `n` events.
pub fn contiguous_blocks(n: usize, n_blocks: usize) -> Vec<std::ops::Range<usize>> {
    (0..n_blocks)
        .map(|b| (b * n / n_blocks)..((b + 1) * n / n_blocks))
        .collect()
}

/// Delete-one-block jackknife standard errors.
///
/// Each refit starts from `theta_hat`. Blocks whose refit fails are
/// reported in the returned list and left out of the variance.
pub fn jackknife_se(
    objective: &Objective,
    sites: &[Location],
    exc: &ExceedanceSet,
    theta_hat: &VariogramParams,
    n_blocks: usize,
    opts: &FitOptions,
) -> Result<JackknifeResult> {
    let n = exc.len();
    if n_blocks < 2 || n_blocks > n {
        return Err(Error::Domain(format!(
            "block count must lie in [2, {n}], got {n_blocks}"
        )));
    }
    let blocks = contiguous_blocks(n, n_blocks);
    let fits: Vec<std::result::Result<Vec<f64>, String>> = blocks
        .par_iter()
        .map(|r| {
            let keep: Vec<usize> = (0..n).filter(|i| !r.contains(i)).collect();
            let sub = exc.subset(&keep);
            optimize(objective, sites, &sub, &[*theta_hat], opts)
                .map_err(|e| e.to_string())
                .and_then(|f| {
                    if f.converged {
                        Ok(opts.free.values(&f.theta_hat))
                    } else {
                        Err("refit did not converge".to_string())
                    }
                })
        })
        .collect();
    let mut estimates = Vec::new();
    let mut failures = Vec::new();
    for (b, f) in fits.into_iter().enumerate() {
        match f {
            Ok(v) => estimates.push(v),
            Err(e) => {
                log::warn!("jackknife block {b} failed: {e}");
                failures.push((b, e));
            }
        }
    }
    let m = estimates.len();
    if m < 2 {
        return Err(Error::NonConvergence {
            message: format!("only {m} of {n_blocks} jackknife refits succeeded"),
            starts: Vec::new(),
        });
    }
    let d = opts.free.len();
    let se = (0..d)
        .map(|k| {
            let mean = estimates.iter().map(|v| v[k]).sum::<f64>() / m as f64;
            let ss: f64 = estimates.iter().map(|v| (v[k] - mean).powi(2)).sum();
            ((m as f64 - 1.0) / m as f64 * ss).sqrt()
        })
        .collect();
    Ok(JackknifeResult {
        se,
        estimates,
        failures,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct JackknifeResult {
    pub se: Vec<f64>,
    /// Leave-one-block-out estimates of the free parameters.
    pub estimates: Vec<Vec<f64>>,
    /// Failed blocks with their messages.
    pub failures: Vec<(usize, String)>,
}

/// `2 · (objective(theta_hat) − objective(theta0))`.
pub fn score_ratio_statistic(
    objective: &Objective,
    sites: &[Location],
    exc: &ExceedanceSet,
    theta0: &VariogramParams,
    theta_hat: &VariogramParams,
) -> Result<f64> {
    Ok(2.0
        * (objective.evaluate(theta_hat, sites, exc)? - objective.evaluate(theta0, sites, exc)?))
}
