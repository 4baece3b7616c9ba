//! Pairwise extremal dependence summaries for model checking.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;
use crate::risk::{exceeds, RiskFunctional};
use crate::variogram::{distance, eval_variogram, Location, VariogramParams};

/// Pairwise extremal coefficient `2Φ(√(γ(h)/2))` at lag `h`.
pub fn extremal_coefficient(params: &VariogramParams, h: [f64; 2]) -> Result<f64> {
    Ok(coefficient_from_gamma(eval_variogram(params, h)?))
}

fn coefficient_from_gamma(gamma: f64) -> f64 {
    (2.0 * normal::cdf((gamma / 2.0).sqrt())).clamp(1.0, 2.0)
}

/// Model probability that site `j` exceeds given that site `i` does.
pub fn cond_exceed_model(params: &VariogramParams, si: &Location, sj: &Location) -> Result<f64> {
    Ok(2.0 - extremal_coefficient(params, [sj.x - si.x, sj.y - si.y])?)
}

/// Counts behind an empirical conditional exceedance estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExceedanceCounts {
    pub joint: usize,
    pub conditioning: usize,
}

impl ExceedanceCounts {
    /// `joint / conditioning`, or `None` when nothing conditions.
    pub fn estimate(&self) -> Option<f64> {
        (self.conditioning > 0).then(|| self.joint as f64 / self.conditioning as f64)
    }
}

/// Rows whose risk exceeds `risk_u`.
fn risk_exceeders<'a>(
    rows: &'a [Vec<f64>],
    risk: &RiskFunctional,
    risk_u: &[f64],
) -> Vec<&'a [f64]> {
    rows.iter()
        .filter(|r| exceeds(risk, r, risk_u))
        .map(|r| r.as_slice())
        .collect()
}

fn counts(events: &[&[f64]], site_u: &[f64], i: usize, j: usize) -> ExceedanceCounts {
    let mut c = ExceedanceCounts {
        joint: 0,
        conditioning: 0,
    };
    for e in events {
        if e[i] > site_u[i] {
            c.conditioning += 1;
            if e[j] > site_u[j] {
                c.joint += 1;
            }
        }
    }
    c
}

/// Empirical conditional exceedance probability among risk-exceeding rows.
///
/// Returns `None` when no row exceeds at site `i`.
pub fn cond_exceed_empirical(
    rows: &[Vec<f64>],
    risk: &RiskFunctional,
    u: &[f64],
    i: usize,
    j: usize,
) -> Result<Option<f64>> {
    if i >= u.len() || j >= u.len() {
        return Err(Error::Domain(format!(
            "site index out of range for {} sites",
            u.len()
        )));
    }
    let events = risk_exceeders(rows, risk, u);
    Ok(counts(&events, u, i, j).estimate())
}

/// One ordered site pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairDiagnostic {
    pub i: usize,
    pub j: usize,
    pub distance: f64,
    pub pi_model: f64,
    pub counts: ExceedanceCounts,
}

/// Model and empirical conditional exceedance probabilities for all ordered pairs.
///
/// `risk_u` selects events through the risk functional; `site_u` holds the
/// per-site thresholds used for the pairwise counts.
pub fn pairwise_diagnostics(
    params: &VariogramParams,
    sites: &[Location],
    rows: &[Vec<f64>],
    risk: &RiskFunctional,
    risk_u: &[f64],
    site_u: &[f64],
) -> Result<Vec<PairDiagnostic>> {
    params.validate()?;
    let n = sites.len();
    if risk_u.len() != n || site_u.len() != n {
        return Err(Error::Domain(format!(
            "thresholds must have {n} components"
        )));
    }
    if let Some(m) = rows.iter().position(|r| r.len() != n) {
        return Err(Error::Domain(format!("row {m} does not have {n} values")));
    }
    let events = risk_exceeders(rows, risk, risk_u);
    Ok((0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let events = &events;
            (0..n).filter(move |&j| j != i).map(move |j| {
                let (si, sj) = (&sites[i], &sites[j]);
                PairDiagnostic {
                    i,
                    j,
                    distance: distance(si, sj),
                    pi_model: 2.0 - coefficient_from_gamma(params.gamma_between(si, sj)),
                    counts: counts(events, site_u, i, j),
                }
            })
        })
        .collect())
}

/// Distance-binned summary of pairwise diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticBin {
    /// Mean pair distance in the bin.
    pub distance: f64,
    pub pi_model: f64,
    /// Mean of the defined pairwise estimates, `NaN` if none are defined.
    pub pi_empirical: f64,
    /// Number of pairs with a defined estimate.
    pub n_pairs_events: usize,
    /// Mean conditioning count over those pairs.
    pub mean_conditioning: f64,
}

/// Averages pairs into `n_bins` equal-width distance bins; empty bins are dropped.
pub fn binned_table(pairs: &[PairDiagnostic], n_bins: usize) -> Vec<DiagnosticBin> {
    if pairs.is_empty() || n_bins == 0 {
        return Vec::new();
    }
    let dmax = pairs.iter().map(|p| p.distance).fold(0.0, f64::max);
    let width = if dmax > 0.0 {
        dmax / n_bins as f64
    } else {
        1.0
    };
    let mut acc = vec![(0usize, 0.0, 0.0, 0usize, 0.0, 0.0); n_bins];
    for p in pairs {
        let b = ((p.distance / width) as usize).min(n_bins - 1);
        let a = &mut acc[b];
        a.0 += 1;
        a.1 += p.distance;
        a.2 += p.pi_model;
        if let Some(e) = p.counts.estimate() {
            a.3 += 1;
            a.4 += e;
            a.5 += p.counts.conditioning as f64;
        }
    }
    acc.into_iter()
        .filter(|a| a.0 > 0)
        .map(|(n, d, m, k, e, c)| DiagnosticBin {
            distance: d / n as f64,
            pi_model: m / n as f64,
            pi_empirical: if k > 0 { e / k as f64 } else { f64::NAN },
            n_pairs_events: k,
            mean_conditioning: if k > 0 { c / k as f64 } else { 0.0 },
        })
        .collect()
}

/// Normal-approximation binomial band `p ± z·√(p(1−p)/n)`, clipped to [0, 1].
pub fn binomial_band(p: f64, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let half = z * (p * (1.0 - p) / n as f64).sqrt();
    ((p - half).max(0.0), (p + half).min(1.0))
}

/// Fraction of pairs with a defined estimate whose estimate lies in the 95% band
/// around the model value.
pub fn band_coverage(pairs: &[PairDiagnostic]) -> Option<f64> {
    let defined: Vec<_> = pairs
        .iter()
        .filter_map(|p| p.counts.estimate().map(|e| (p, e)))
        .collect();
    if defined.is_empty() {
        return None;
    }
    let inside = defined
        .iter()
        .filter(|(p, e)| {
            let (lo, hi) = binomial_band(p.pi_model, p.counts.conditioning, 1.959964);
            *e >= lo - 1e-12 && *e <= hi + 1e-12
        })
        .count();
    Some(inside as f64 / defined.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn coefficient_limits() {
        let p = VariogramParams::isotropic(1.0, 2.5).with_half_factor(false);
        assert_eq!(extremal_coefficient(&p, [0.0, 0.0]).unwrap(), 1.0);
        let far = extremal_coefficient(&p, [1e9, 0.0]).unwrap();
        assert!((far - 2.0).abs() < 1e-12);
        let v = extremal_coefficient(&p, [2.5, 0.0]).unwrap();
        assert!((v - 2.0 * normal::cdf(0.5f64.sqrt())).abs() < 1e-14);
        assert!((v - 1.5205).abs() < 1e-4);
    }

    #[test]
    fn model_probability_at_gamma_two() {
        // γ = (h/τ)^κ = 2 with the half factor off.
        let p = VariogramParams::isotropic(1.0, 1.0).with_half_factor(false);
        let a = Location::new("a", 0.0, 0.0);
        let b = Location::new("b", 2.0, 0.0);
        let pi = cond_exceed_model(&p, &a, &b).unwrap();
        assert!((pi - 0.317_310_507_862_914).abs() < 1e-12);
        assert_eq!(pi, cond_exceed_model(&p, &b, &a).unwrap());
    }

    #[test]
    fn empirical_same_site_is_one() {
        let rows = vec![vec![5.0, 1.0], vec![0.5, 0.5], vec![3.0, 4.0]];
        let u = [2.0, 2.0];
        let v = cond_exceed_empirical(&rows, &RiskFunctional::Max, &u, 0, 0).unwrap();
        assert_eq!(v, Some(1.0));
        let v = cond_exceed_empirical(&rows, &RiskFunctional::Max, &u, 0, 1).unwrap();
        assert_eq!(v, Some(0.5));
    }

    #[test]
    fn empty_denominator_is_undefined() {
        let rows = vec![vec![0.5, 5.0]];
        let v = cond_exceed_empirical(&rows, &RiskFunctional::Max, &[2.0, 2.0], 0, 1).unwrap();
        assert_eq!(v, None);
    }

    #[test]
    fn bins_average_pairs() {
        let mk = |d: f64, joint, conditioning| PairDiagnostic {
            i: 0,
            j: 1,
            distance: d,
            pi_model: 0.5,
            counts: ExceedanceCounts {
                joint,
                conditioning,
            },
        };
        let pairs = [mk(1.0, 1, 2), mk(2.0, 0, 0), mk(10.0, 3, 4)];
        let t = binned_table(&pairs, 2);
        assert_eq!(t.len(), 2);
        assert!((t[0].distance - 1.5).abs() < 1e-12);
        assert_eq!(t[0].n_pairs_events, 1);
        assert!((t[0].pi_empirical - 0.5).abs() < 1e-12);
        assert!((t[1].pi_empirical - 0.75).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn coefficient_bounds_and_identity(kappa in 0.05f64..1.99, tau in 0.1f64..50.0, hx in -100.0f64..100.0, hy in -100.0f64..100.0) {
            let p = VariogramParams::isotropic(kappa, tau);
            let t = extremal_coefficient(&p, [hx, hy]).unwrap();
            prop_assert!((1.0..=2.0).contains(&t));
            let t2 = extremal_coefficient(&p, [2.0 * hx, 2.0 * hy]).unwrap();
            prop_assert!(t2 >= t);
            let pi = cond_exceed_model(&p, &Location::new("a", 0.0, 0.0), &Location::new("b", hx, hy)).unwrap();
            prop_assert_eq!(pi + t, 2.0);
        }

        #[test]
        fn empirical_in_unit_interval(rows in prop::collection::vec(prop::collection::vec(0.1f64..20.0, 3), 1..60)) {
            if let Some(v) = cond_exceed_empirical(&rows, &RiskFunctional::Sum, &[3.0; 3], 0, 2).unwrap() {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
