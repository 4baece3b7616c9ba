use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::margins::Dataset;
use super::nelder_mead::{nelder_mead, NelderMeadOptions};
use crate::error::{Error, Result};
use crate::objectives::{ExceedanceSet, Objective};
use crate::risk::RiskFunctional;
use crate::variogram::{Location, VariogramParams};

/// Which dependence parameters are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FreeParams {
    /// Shape and range; rotation and stretch stay at their start values.
    #[default]
    Isotropic,
    /// Shape, range, rotation and stretch.
    Anisotropic,
}

impl FreeParams {
    pub fn names(&self) -> &'static [&'static str] {
        match self {
            Self::Isotropic => &["kappa", "tau"],
            Self::Anisotropic => &["kappa", "tau", "eta", "a"],
        }
    }

    pub fn len(&self) -> usize {
        self.names().len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Free parameter values in natural units.
    pub fn values(&self, p: &VariogramParams) -> Vec<f64> {
        match self {
            Self::Isotropic => vec![p.kappa, p.tau],
            Self::Anisotropic => vec![p.kappa, p.tau, p.eta, p.a],
        }
    }

    /// `base` with its free parameters replaced by `values`.
    pub fn with_values(&self, base: &VariogramParams, values: &[f64]) -> VariogramParams {
        let mut p = *base;
        p.kappa = values[0];
        p.tau = values[1];
        if let Self::Anisotropic = self {
            p.eta = values[2];
            p.a = values[3];
        }
        p
    }

    /// Maps parameters to the unconstrained optimization scale.
    pub fn to_unconstrained(&self, p: &VariogramParams) -> Vec<f64> {
        let logit = |t: f64| (t / (1.0 - t)).ln();
        let mut z = vec![logit(p.kappa / 2.0), p.tau.ln()];
        if let Self::Anisotropic = self {
            z.push(logit((p.eta / PI + 0.5).clamp(1e-12, 1.0 - 1e-12)));
            z.push((p.a - 1.0).max(1e-12).ln());
        }
        z
    }

    pub fn from_unconstrained(&self, base: &VariogramParams, z: &[f64]) -> VariogramParams {
        let logistic = |t: f64| 1.0 / (1.0 + (-t).exp());
        let mut p = *base;
        p.kappa = 2.0 * logistic(z[0]);
        p.tau = z[1].exp();
        if let Self::Anisotropic = self {
            p.eta = PI * (logistic(z[2]) - 0.5);
            p.a = 1.0 + z[3].exp();
        }
        p
    }
}

/// Optimizer settings shared by every start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub free: FreeParams,
    pub nelder_mead: NelderMeadOptions,
}

impl FitOptions {
    /// Defaults for the objective: function tolerance 1e-6, loosened to
    /// 1e-3 for the censored likelihood, whose QMC noise would otherwise be chased.
    pub fn for_objective(objective: &Objective) -> Self {
        let mut nm = NelderMeadOptions::default();
        if objective.is_censored() {
            nm.ftol = 1e-3;
            nm.xtol = 1e-2;
            nm.initial_step = 0.25;
        }
        Self {
            free: FreeParams::Isotropic,
            nelder_mead: nm,
        }
    }

    pub fn with_free(mut self, free: FreeParams) -> Self {
        self.free = free;
        self
    }
}

/// Outcome of one optimization start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartOutcome {
    pub start: VariogramParams,
    pub theta: VariogramParams,
    pub value: f64,
    pub converged: bool,
    pub evaluations: usize,
    pub error: Option<String>,
}

/// Sandwich information estimate for a fitted parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GodambeEstimate {
    pub params: Vec<String>,
    /// Mean outer product of per-event gradients.
    pub j: Vec<Vec<f64>>,
    /// Mean per-event Hessian.
    pub k: Vec<Vec<f64>>,
    /// `K J⁻¹ K`.
    pub g: Vec<Vec<f64>>,
    pub se: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub objective: String,
    pub theta_hat: VariogramParams,
    pub objective_value: f64,
    pub converged: bool,
    pub n_events: usize,
    /// Names of the estimated parameters, in the order of `se`.
    pub params: Vec<String>,
    pub se: Option<Vec<f64>>,
    pub godambe: Option<GodambeEstimate>,
    pub starts: Vec<StartOutcome>,
}

/// Starting values: shape one with range equal to the mean nearest-neighbour
/// distance, then random perturbations drawn from `seed`.
pub fn default_starts(
    sites: &[Location],
    k: usize,
    seed: u64,
    free: FreeParams,
) -> Vec<VariogramParams> {
    let nn: f64 = sites
        .iter()
        .enumerate()
        .map(|(i, s)| {
            sites
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, t)| ((s.x - t.x).powi(2) + (s.y - t.y).powi(2)).sqrt())
                .filter(|&d| d > 0.0)
                .fold(f64::INFINITY, f64::min)
        })
        .filter(|d| d.is_finite())
        .sum::<f64>()
        / sites.len().max(1) as f64;
    let tau0 = if nn > 0.0 { nn } else { 1.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts = vec![VariogramParams::isotropic(1.0, tau0)];
    while starts.len() < k.max(1) {
        let mut p = VariogramParams::isotropic(
            rng.gen_range(0.3..1.8),
            tau0 * rng.gen_range(-1.0f64..1.0).exp(),
        );
        if let FreeParams::Anisotropic = free {
            p = p.with_anisotropy(rng.gen_range(-1.2..1.2), 1.0 + rng.gen_range(0.0..1.5));
        }
        starts.push(p);
    }
    if let FreeParams::Anisotropic = free {
        starts[0] = starts[0].with_anisotropy(0.0, 1.2);
    }
    starts
}

fn run_start(
    objective: &Objective,
    sites: &[Location],
    exc: &ExceedanceSet,
    start: &VariogramParams,
    opts: &FitOptions,
) -> StartOutcome {
    if let Err(e) = start.validate() {
        return StartOutcome {
            start: *start,
            theta: *start,
            value: f64::NEG_INFINITY,
            converged: false,
            evaluations: 0,
            error: Some(e.to_string()),
        };
    }
    let mut last_error: Option<String> = None;
    let z0 = opts.free.to_unconstrained(start);
    let result = nelder_mead(
        |z| {
            let p = opts.free.from_unconstrained(start, z);
            match objective.evaluate(&p, sites, exc) {
                Ok(v) if v.is_finite() => -v,
                Ok(_) => f64::INFINITY,
                Err(e) => {
                    last_error = Some(e.to_string());
                    f64::INFINITY
                }
            }
        },
        &z0,
        &opts.nelder_mead,
    );
    let value = -result.value;
    StartOutcome {
        start: *start,
        theta: opts.free.from_unconstrained(start, &result.x),
        value,
        converged: result.converged && value.is_finite(),
        evaluations: result.evaluations,
        error: if value.is_finite() { None } else { last_error },
    }
}

/// Maximizes the objective from every start and keeps the best converged run.
pub fn optimize(
    objective: &Objective,
    sites: &[Location],
    exc: &ExceedanceSet,
    starts: &[VariogramParams],
    opts: &FitOptions,
) -> Result<FitResult> {
    if starts.is_empty() {
        return Err(Error::Precondition("at least one start is required".into()));
    }
    objective.check(exc)?;
    let outcomes: Vec<StartOutcome> = starts
        .par_iter()
        .map(|s| run_start(objective, sites, exc, s, opts))
        .collect();
    let pick = |converged_only: bool| {
        outcomes
            .iter()
            .enumerate()
            .filter(|(_, o)| o.value.is_finite() && (o.converged || !converged_only))
            .fold(None, |best: Option<(usize, f64)>, (i, o)| match best {
                Some((_, v)) if v >= o.value => best,
                _ => Some((i, o.value)),
            })
    };
    let chosen = pick(true).or_else(|| pick(false));
    let Some((i, _)) = chosen else {
        return Err(Error::NonConvergence {
            message: format!("all {} starts failed", outcomes.len()),
            starts: outcomes,
        });
    };
    let best = &outcomes[i];
    if !best.converged {
        log::warn!("no start converged; reporting the best non-converged run");
    }
    Ok(FitResult {
        objective: objective.to_string(),
        theta_hat: best.theta,
        objective_value: best.value,
        converged: best.converged,
        n_events: exc.len(),
        params: opts.free.names().iter().map(|s| s.to_string()).collect(),
        se: None,
        godambe: None,
        starts: outcomes,
    })
}

/// Events whose risk exceeds the empirical `q`-quantile of the risk values.
///
/// With `q = 0` the threshold sits just below the smallest risk value so
/// that every row is selected.
pub fn select_exceedances(data: &Dataset, risk: &RiskFunctional, q: f64) -> Result<ExceedanceSet> {
    if !(0.0..1.0).contains(&q) {
        return Err(Error::Domain(format!(
            "quantile must lie in [0, 1), got {q}"
        )));
    }
    let n = data.n_rows();
    if n == 0 {
        return Err(Error::InsufficientExceedances {
            found: 0,
            required: 2,
        });
    }
    let values: Vec<f64> = data.rows.iter().map(|r| risk.value_unchecked(r)).collect();
    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    let k = (q * n as f64).ceil() as usize;
    let threshold = if k == 0 {
        sorted[0] * (1.0 - 1e-9)
    } else {
        sorted[k - 1]
    };
    if !(threshold > 0.0) {
        return Err(Error::Domain(format!(
            "risk threshold {threshold} is not positive"
        )));
    }
    let u = vec![threshold; data.n_sites()];
    let events: Vec<Vec<f64>> = data
        .rows
        .iter()
        .filter(|r| crate::risk::exceeds(risk, r, &u))
        .cloned()
        .collect();
    if events.len() < 2 {
        return Err(Error::InsufficientExceedances {
            found: events.len(),
            required: 2,
        });
    }
    ExceedanceSet::new(events, u, risk.clone(), n)
}

/// Mean of `p_bar` censored fits with independent QMC seeds `seed + q`.
///
/// Standard errors are the between-replicate standard deviations over
/// `√p̄`. Failed replicates are dropped with a warning.
pub fn averaged_censored_fit(
    objective: &Objective,
    sites: &[Location],
    exc: &ExceedanceSet,
    p_bar: usize,
    starts: &[VariogramParams],
    opts: &FitOptions,
) -> Result<FitResult> {
    let Objective::Censored { qmc } = objective else {
        return Err(Error::Capability(
            "averaged fits apply to the censored likelihood".into(),
        ));
    };
    if p_bar < 2 {
        return Err(Error::Domain(format!(
            "p_bar must be at least 2, got {p_bar}"
        )));
    }
    let seeds: Vec<u64> = (0..p_bar as u64)
        .map(|q| qmc.seed.wrapping_add(q))
        .collect();
    averaged_with_seeds(objective, sites, exc, &seeds, starts, opts)
}

/// Replicated censored fits with the given QMC seeds.
pub fn averaged_with_seeds(
    objective: &Objective,
    sites: &[Location],
    exc: &ExceedanceSet,
    seeds: &[u64],
    starts: &[VariogramParams],
    opts: &FitOptions,
) -> Result<FitResult> {
    let runs: Vec<Result<FitResult>> = seeds
        .iter()
        .map(|&s| optimize(&objective.with_seed(s), sites, exc, starts, opts))
        .collect();
    let mut fits = Vec::new();
    let mut all_starts = Vec::new();
    for (q, r) in runs.into_iter().enumerate() {
        match r {
            Ok(f) if f.converged => {
                all_starts.extend(f.starts.iter().cloned());
                fits.push(f);
            }
            Ok(f) => {
                log::warn!("replicate {q} did not converge and is excluded");
                all_starts.extend(f.starts);
            }
            Err(e) => log::warn!("replicate {q} failed: {e}"),
        }
    }
    if fits.is_empty() {
        return Err(Error::NonConvergence {
            message: "every replicate failed".into(),
            starts: all_starts,
        });
    }
    let free = opts.free;
    let m = fits.len() as f64;
    let vals: Vec<Vec<f64>> = fits.iter().map(|f| free.values(&f.theta_hat)).collect();
    let mean: Vec<f64> = (0..free.len())
        .map(|k| vals.iter().map(|v| v[k]).sum::<f64>() / m)
        .collect();
    let se: Vec<f64> = (0..free.len())
        .map(|k| {
            if fits.len() < 2 {
                return f64::NAN;
            }
            let var = vals.iter().map(|v| (v[k] - mean[k]).powi(2)).sum::<f64>() / (m - 1.0);
            (var / m).sqrt()
        })
        .collect();
    Ok(FitResult {
        objective: objective.to_string(),
        theta_hat: free.with_values(&fits[0].theta_hat, &mean),
        objective_value: fits.iter().map(|f| f.objective_value).sum::<f64>() / m,
        converged: true,
        n_events: exc.len(),
        params: free.names().iter().map(|s| s.to_string()).collect(),
        se: Some(se),
        godambe: None,
        starts: all_starts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transforms_round_trip() {
        let p = VariogramParams::isotropic(1.3, 4.0).with_anisotropy(-0.7, 2.5);
        for free in [FreeParams::Isotropic, FreeParams::Anisotropic] {
            let z = free.to_unconstrained(&p);
            let back = free.from_unconstrained(&p, &z);
            assert!((back.kappa - p.kappa).abs() < 1e-12);
            assert!((back.tau - p.tau).abs() < 1e-12);
            assert!((back.eta - p.eta).abs() < 1e-12);
            assert!((back.a - p.a).abs() < 1e-12);
        }
        let extreme = FreeParams::Anisotropic.from_unconstrained(&p, &[40.0, -3.0, -40.0, -50.0]);
        assert!(extreme.validate().is_ok() || extreme.kappa == 2.0);
    }

    fn dataset(rows: Vec<Vec<f64>>) -> Dataset {
        Dataset::new(vec!["a".into(), "b".into()], rows).unwrap()
    }

    #[test]
    fn selection_counts() {
        let rows: Vec<Vec<f64>> = (1..=10_000).map(|i| vec![i as f64, 1.0]).collect();
        let exc = select_exceedances(&dataset(rows.clone()), &RiskFunctional::Sum, 0.99).unwrap();
        assert_eq!(exc.len(), 100);
        assert_eq!(exc.n_total, 10_000);
        let all = select_exceedances(&dataset(rows.clone()), &RiskFunctional::Sum, 0.0).unwrap();
        assert_eq!(all.len(), 10_000);
        let higher = select_exceedances(&dataset(rows), &RiskFunctional::Sum, 0.995).unwrap();
        assert!(higher.events.iter().all(|e| exc.events.contains(e)));
    }

    #[test]
    fn selection_needs_two_events() {
        let rows = vec![vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]];
        assert!(matches!(
            select_exceedances(&dataset(rows), &RiskFunctional::Sum, 0.9),
            Err(Error::InsufficientExceedances { found: 0, .. })
        ));
    }
}
