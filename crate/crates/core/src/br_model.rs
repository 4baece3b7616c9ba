//! Brown–Resnick exponent measure, intensity and censored density.
//!
//! Two algebraically different forms of the intensity are provided. The
//! anchored form conditions on one site and works with the covariance of the
//! log-ratios to that site. The centred form works with the covariance `Σ*`
//! of the Gaussian process pinned at a reference point and expresses
//! `log λ` as a quadratic in `log x`; its first and second partial
//! derivatives are available in closed form.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{chol_logdet, cholesky_with_jitter};
use crate::mvn_qmc::{mvn_cdf, MvnEstimate, QmcConfig};
use crate::normal;
use crate::variogram::{gamma_matrix, Location, VariogramParams};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Anything that evaluates a log-intensity at a positive vector.
pub trait LogIntensity {
    fn dim(&self) -> usize;
    fn log_intensity(&self, x: &[f64]) -> Result<f64>;
}

fn check_positive(x: &[f64], dim: usize) -> Result<()> {
    if x.len() != dim {
        return Err(Error::Domain(format!(
            "expected a vector of length {dim}, got {}",
            x.len()
        )));
    }
    if let Some(i) = x.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::Domain(format!(
            "component {i} must be positive and finite, got {}",
            x[i]
        )));
    }
    Ok(())
}

/// Mixes a stream index into a base seed.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Variogram matrix after rejecting coincident sites.
pub fn distinct_gamma(params: &VariogramParams, sites: &[Location]) -> Result<DMatrix<f64>> {
    let g = gamma_matrix(params, sites)?;
    if let Some(&(i, j)) = g.duplicate_pairs.first() {
        return Err(Error::DuplicateSites {
            first: sites[i].id.clone(),
            second: sites[j].id.clone(),
        });
    }
    Ok(g.matrix)
}

/// Per-parameter cache for the centred form of the intensity.
#[derive(Debug, Clone)]
pub struct BrPrecomputed {
    /// Covariance of the process pinned at the reference point.
    pub sigma_star: DMatrix<f64>,
    /// `Σ*⁻¹ 1`.
    pub rho: DVector<f64>,
    /// `Σ*⁻¹ − ρρᵀ / 1ᵀρ`; annihilates constant vectors.
    pub gamma_mat: DMatrix<f64>,
    pub sigma_diag: DVector<f64>,
    pub chol: Cholesky<f64, Dyn>,
    pub logdet: f64,
    /// Pairwise semi-variogram matrix of the sites.
    pub variogram: DMatrix<f64>,
    /// Linear coefficient of the quadratic in `log x`.
    pub linear: DVector<f64>,
    /// Constant part of `log λ`.
    pub constant: f64,
}

/// Centroid of the sites, moved off any site it coincides with.
pub fn reference_point(sites: &[Location]) -> [f64; 2] {
    let n = sites.len() as f64;
    let cx = sites.iter().map(|s| s.x).sum::<f64>() / n;
    let cy = sites.iter().map(|s| s.y).sum::<f64>() / n;
    let mut dmin = f64::INFINITY;
    for (i, s) in sites.iter().enumerate() {
        for t in &sites[i + 1..] {
            let d = ((s.x - t.x).powi(2) + (s.y - t.y).powi(2)).sqrt();
            if d > 0.0 {
                dmin = dmin.min(d);
            }
        }
    }
    if !dmin.is_finite() {
        dmin = 1.0;
    }
    let clearance = |p: [f64; 2]| {
        sites
            .iter()
            .map(|s| ((s.x - p[0]).powi(2) + (s.y - p[1]).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min)
    };
    let golden = PI * (3.0 - 5f64.sqrt());
    let mut best = ([cx, cy], clearance([cx, cy]));
    for k in 0..64 {
        if best.1 >= 0.2 * dmin {
            break;
        }
        let angle = golden * (k + 1) as f64;
        let p = [cx + 0.5 * dmin * angle.cos(), cy + 0.5 * dmin * angle.sin()];
        let c = clearance(p);
        if c > best.1 {
            best = (p, c);
        }
    }
    best.0
}

pub fn precompute(params: &VariogramParams, sites: &[Location]) -> Result<BrPrecomputed> {
    precompute_with_reference(params, sites, reference_point(sites))
}

/// Builds `Σ*_{jk} = γ(s_j, s₀) + γ(s_k, s₀) − γ(s_j, s_k)` for the reference point `s₀`.
pub fn precompute_with_reference(
    params: &VariogramParams,
    sites: &[Location],
    reference: [f64; 2],
) -> Result<BrPrecomputed> {
    let variogram = distinct_gamma(params, sites)?;
    let to_ref: Vec<f64> = sites
        .iter()
        .map(|s| params.gamma_unchecked([s.x - reference[0], s.y - reference[1]]))
        .collect();
    if let Some(i) = to_ref.iter().position(|&g| g == 0.0) {
        return Err(Error::Domain(format!(
            "reference point coincides with site `{}`",
            sites[i].id
        )));
    }
    let n = sites.len();
    let sigma_star = DMatrix::from_fn(n, n, |j, k| to_ref[j] + to_ref[k] - variogram[(j, k)]);
    BrPrecomputed::from_covariance(sigma_star, variogram)
}

impl BrPrecomputed {
    /// Derives every cached quantity from `Σ*` and the variogram matrix.
    pub fn from_covariance(sigma_star: DMatrix<f64>, variogram: DMatrix<f64>) -> Result<Self> {
        let n = sigma_star.nrows();
        let (chol, _) = cholesky_with_jitter(&sigma_star)?;
        let logdet = chol_logdet(&chol);
        let inv = chol.inverse();
        let rho = chol.solve(&DVector::from_element(n, 1.0));
        let rho_sum = rho.sum();
        if !(rho_sum > 0.0) {
            return Err(Error::SingularCovariance { pivot: 0 });
        }
        let mut gamma_mat = &inv - &rho * rho.transpose() / rho_sum;
        gamma_mat = (&gamma_mat + gamma_mat.transpose()) * 0.5;
        let sigma_diag = sigma_star.diagonal();
        let inv_sigma = &inv * &sigma_diag;
        let sigma_rho = sigma_diag.dot(&rho);
        let linear = &rho * (2.0 / rho_sum) + &inv_sigma - &rho * (sigma_rho / rho_sum);
        let c0 = 0.25 * sigma_diag.dot(&inv_sigma) - 0.25 * sigma_rho * sigma_rho / rho_sum
            + sigma_rho / rho_sum
            - 1.0 / rho_sum;
        let constant =
            -0.5 * logdet - 0.5 * rho_sum.ln() - 0.5 * (n as f64 - 1.0) * LN_2PI - 0.5 * c0;
        Ok(Self {
            sigma_star,
            rho,
            gamma_mat,
            sigma_diag,
            chol,
            logdet,
            variogram,
            linear,
            constant,
        })
    }

    /// `log λ` as a function of `L = log x`.
    pub fn log_intensity_at_log(&self, log_x: &DVector<f64>) -> f64 {
        let gl = &self.gamma_mat * log_x;
        self.constant - log_x.sum() - 0.5 * log_x.dot(&gl) - 0.5 * log_x.dot(&self.linear)
    }

    /// Gradient and diagonal second partials of `log λ` in `x`.
    pub fn score_components(&self, x: &[f64]) -> Result<ScoreComponents> {
        check_positive(x, self.dim())?;
        let log_x = DVector::from_iterator(x.len(), x.iter().map(|v| v.ln()));
        let gl = &self.gamma_mat * &log_x;
        let mut gradient = Vec::with_capacity(x.len());
        let mut hessian_diag = Vec::with_capacity(x.len());
        for i in 0..x.len() {
            let f = -1.0 - gl[i] - 0.5 * self.linear[i];
            gradient.push(f / x[i]);
            hessian_diag.push((-self.gamma_mat[(i, i)] - f) / (x[i] * x[i]));
        }
        Ok(ScoreComponents {
            gradient,
            hessian_diag,
        })
    }
}

impl LogIntensity for BrPrecomputed {
    fn dim(&self) -> usize {
        self.sigma_star.nrows()
    }

    fn log_intensity(&self, x: &[f64]) -> Result<f64> {
        check_positive(x, self.dim())?;
        let log_x = DVector::from_iterator(x.len(), x.iter().map(|v| v.ln()));
        Ok(self.log_intensity_at_log(&log_x))
    }
}

/// First and diagonal second partial derivatives of `log λ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreComponents {
    pub gradient: Vec<f64>,
    pub hessian_diag: Vec<f64>,
}

impl ScoreComponents {
    /// Sum of the diagonal second partials.
    pub fn laplacian(&self) -> f64 {
        self.hessian_diag.iter().sum()
    }
}

/// Covariance of log-ratios to an anchor site:
/// `Σ_{jk} = γ_{j,a} + γ_{k,a} − γ_{j,k}` over `j, k ≠ a`.
#[derive(Debug, Clone)]
pub struct EngelkeDecomposition {
    pub anchor: usize,
    /// Site indices other than the anchor, in order.
    pub others: Vec<usize>,
    pub sigma_theta: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    logdet: f64,
    variogram: DMatrix<f64>,
}

impl EngelkeDecomposition {
    pub fn new(variogram: &DMatrix<f64>, anchor: usize) -> Result<Self> {
        let n = variogram.nrows();
        if n < 2 || anchor >= n {
            return Err(Error::Domain(format!(
                "anchor {anchor} invalid for {n} sites"
            )));
        }
        let others: Vec<usize> = (0..n).filter(|&j| j != anchor).collect();
        let sigma_theta = anchored_covariance(variogram, anchor, &others, &others);
        let (chol, _) = cholesky_with_jitter(&sigma_theta).map_err(|e| match e {
            Error::SingularCovariance { pivot } => Error::SingularCovariance {
                pivot: others[pivot.min(others.len() - 1)],
            },
            other => other,
        })?;
        let logdet = chol_logdet(&chol);
        Ok(Self {
            anchor,
            others,
            sigma_theta,
            chol,
            logdet,
            variogram: variogram.clone(),
        })
    }

    pub fn from_sites(params: &VariogramParams, sites: &[Location], anchor: usize) -> Result<Self> {
        Self::new(&distinct_gamma(params, sites)?, anchor)
    }

    /// `log(x_j / x_a) + γ_{j,a}` for every `j ≠ a`.
    pub fn x_tilde(&self, x: &[f64]) -> DVector<f64> {
        let xa = x[self.anchor];
        DVector::from_iterator(
            self.others.len(),
            self.others
                .iter()
                .map(|&j| (x[j] / xa).ln() + self.variogram[(j, self.anchor)]),
        )
    }
}

impl LogIntensity for EngelkeDecomposition {
    fn dim(&self) -> usize {
        self.variogram.nrows()
    }

    fn log_intensity(&self, x: &[f64]) -> Result<f64> {
        check_positive(x, self.dim())?;
        let xt = self.x_tilde(x);
        let z = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&xt)
            .ok_or(Error::SingularCovariance { pivot: self.anchor })?;
        let m = self.others.len() as f64;
        Ok(-0.5 * self.logdet
            - 2.0 * x[self.anchor].ln()
            - self.others.iter().map(|&j| x[j].ln()).sum::<f64>()
            - 0.5 * m * LN_2PI
            - 0.5 * z.norm_squared())
    }
}

fn anchored_covariance(
    variogram: &DMatrix<f64>,
    anchor: usize,
    rows: &[usize],
    cols: &[usize],
) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |r, c| {
        let (j, k) = (rows[r], cols[c]);
        variogram[(j, anchor)] + variogram[(k, anchor)] - variogram[(j, k)]
    })
}

/// QMC estimate of the exponent measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentMeasure {
    pub value: f64,
    pub probable_error: f64,
}

/// `Λ(x) = Σ_i x_i⁻¹ Φ_{I−1}(γ_{·,i} + log(x_·/x_i); Σ⁽ⁱ⁾)`.
pub fn exponent_measure(
    params: &VariogramParams,
    sites: &[Location],
    x: &[f64],
    qmc: &QmcConfig,
) -> Result<ExponentMeasure> {
    exponent_measure_from_gamma(&distinct_gamma(params, sites)?, x, qmc)
}

pub fn exponent_measure_from_gamma(
    variogram: &DMatrix<f64>,
    x: &[f64],
    qmc: &QmcConfig,
) -> Result<ExponentMeasure> {
    let singletons: Vec<Vec<usize>> = (0..variogram.nrows()).map(|i| vec![i]).collect();
    exponent_measure_over_orbits(variogram, x, qmc, &singletons)
}

/// Exponent measure evaluating one term per orbit of sites.
///
/// Every orbit must consist of sites exchanged by a permutation that
/// preserves both the variogram matrix and `x`; the term of its first
/// member is then counted once per member.
pub fn exponent_measure_over_orbits(
    variogram: &DMatrix<f64>,
    x: &[f64],
    qmc: &QmcConfig,
    orbits: &[Vec<usize>],
) -> Result<ExponentMeasure> {
    let n = variogram.nrows();
    check_positive(x, n)?;
    let mut value = 0.0;
    let mut err2 = 0.0;
    for orbit in orbits {
        let i = orbit[0];
        let m = orbit.len() as f64;
        let others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        let sigma = anchored_covariance(variogram, i, &others, &others);
        let upper: Vec<f64> = others
            .iter()
            .map(|&j| variogram[(i, j)] + (x[j] / x[i]).ln())
            .collect();
        let est = mvn_cdf(
            &upper,
            &sigma,
            &qmc.with_seed(derive_seed(qmc.seed, i as u64)),
        )?;
        value += m * est.value / x[i];
        err2 += (m * est.probable_error / x[i]).powi(2);
    }
    Ok(ExponentMeasure {
        value,
        probable_error: err2.sqrt(),
    })
}

/// Orbits of the sites under the planar symmetries of the site set.
///
/// Candidate maps are the eight rotations and reflections of the square
/// about the centroid; a map is kept when it permutes the sites and leaves
/// every pairwise semi-variogram value unchanged.
pub fn symmetry_orbits(params: &VariogramParams, sites: &[Location]) -> Vec<Vec<usize>> {
    let n = sites.len();
    let cx = sites.iter().map(|s| s.x).sum::<f64>() / n as f64;
    let cy = sites.iter().map(|s| s.y).sum::<f64>() / n as f64;
    let extent = sites
        .iter()
        .map(|s| (s.x - cx).abs().max((s.y - cy).abs()))
        .fold(0.0_f64, f64::max)
        .max(1.0);
    let tol = 1e-9 * extent;
    let maps: [fn(f64, f64) -> (f64, f64); 7] = [
        |x, y| (-y, x),
        |x, y| (-x, -y),
        |x, y| (y, -x),
        |x, y| (-x, y),
        |x, y| (x, -y),
        |x, y| (y, x),
        |x, y| (-y, -x),
    ];
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while parent[r] != r {
            r = parent[r];
        }
        parent[i] = r;
        r
    }
    for map in maps {
        let mut perm = Vec::with_capacity(n);
        for s in sites {
            let (mx, my) = map(s.x - cx, s.y - cy);
            match sites
                .iter()
                .position(|t| (t.x - cx - mx).abs() <= tol && (t.y - cy - my).abs() <= tol)
            {
                Some(j) => perm.push(j),
                None => break,
            }
        }
        if perm.len() != n {
            continue;
        }
        let preserves = (0..n).all(|i| {
            (i + 1..n).all(|j| {
                let a = params.gamma_between(&sites[i], &sites[j]);
                let b = params.gamma_between(&sites[perm[i]], &sites[perm[j]]);
                (a - b).abs() <= 1e-10 * a.abs().max(1e-300)
            })
        });
        if !preserves {
            continue;
        }
        for (i, &j) in perm.iter().enumerate() {
            let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
            if ri != rj {
                parent[ri.max(rj)] = ri.min(rj);
            }
        }
    }
    let mut orbits: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = orbits.len();
            orbits.push(Vec::new());
        }
        orbits[slot[r]].push(i);
    }
    orbits
}

/// Censored density of threshold exceedances for one parameter value.
///
/// Coordinates with `x_j > u_j` enter through the intensity, the rest are
/// integrated over `(0, u_j]`. The normalizer `Λ(u)` is evaluated once at
/// construction and shared by all events.
#[derive(Debug, Clone)]
pub struct CensoredModel {
    variogram: DMatrix<f64>,
    u: Vec<f64>,
    qmc: QmcConfig,
    pub normalizer: ExponentMeasure,
}

impl CensoredModel {
    pub fn new(variogram: DMatrix<f64>, u: &[f64], qmc: QmcConfig) -> Result<Self> {
        let singletons: Vec<Vec<usize>> = (0..variogram.nrows()).map(|i| vec![i]).collect();
        Self::with_orbits(variogram, u, qmc, &singletons)
    }

    /// As [`CensoredModel::new`], sharing normalizer terms within site orbits.
    /// Orbits whose members carry different thresholds are split.
    pub fn with_orbits(
        variogram: DMatrix<f64>,
        u: &[f64],
        qmc: QmcConfig,
        orbits: &[Vec<usize>],
    ) -> Result<Self> {
        qmc.validate()?;
        check_positive(u, variogram.nrows())?;
        let orbits: Vec<Vec<usize>> = orbits
            .iter()
            .flat_map(|o| {
                if o.iter().all(|&j| u[j] == u[o[0]]) {
                    vec![o.clone()]
                } else {
                    o.iter().map(|&j| vec![j]).collect()
                }
            })
            .collect();
        let normalizer = exponent_measure_over_orbits(
            &variogram,
            u,
            &qmc.with_seed(derive_seed(qmc.seed, u64::MAX)),
            &orbits,
        )?;
        if !(normalizer.value > 0.0) {
            return Err(Error::Domain(
                "exponent measure of the threshold is zero".into(),
            ));
        }
        Ok(Self {
            variogram,
            u: u.to_vec(),
            qmc,
            normalizer,
        })
    }

    pub fn from_sites(
        params: &VariogramParams,
        sites: &[Location],
        u: &[f64],
        qmc: QmcConfig,
    ) -> Result<Self> {
        Self::with_orbits(
            distinct_gamma(params, sites)?,
            u,
            qmc,
            &symmetry_orbits(params, sites),
        )
    }

    pub fn dim(&self) -> usize {
        self.variogram.nrows()
    }

    /// Log censored density with the first exceeding coordinate as anchor.
    /// `stream` selects the QMC randomization for this event.
    pub fn log_density(&self, x: &[f64], stream: u64) -> Result<f64> {
        self.log_density_with_anchor(x, None, stream)
    }

    pub fn log_density_with_anchor(
        &self,
        x: &[f64],
        anchor: Option<usize>,
        stream: u64,
    ) -> Result<f64> {
        let n = self.dim();
        check_positive(x, n)?;
        let exceed: Vec<usize> = (0..n).filter(|&j| x[j] > self.u[j]).collect();
        if exceed.is_empty() {
            return Err(Error::Precondition(
                "no coordinate exceeds its threshold".into(),
            ));
        }
        let a = match anchor {
            Some(a) if exceed.contains(&a) => a,
            Some(a) => {
                return Err(Error::Precondition(format!(
                    "anchor {a} does not exceed its threshold"
                )))
            }
            None => exceed[0],
        };
        let rest_e: Vec<usize> = exceed.iter().copied().filter(|&j| j != a).collect();
        let cens: Vec<usize> = (0..n).filter(|&j| x[j] <= self.u[j]).collect();
        let g = &self.variogram;
        let xa = x[a];

        let mut value = -2.0 * xa.ln() - rest_e.iter().map(|&j| x[j].ln()).sum::<f64>();
        let xt = DVector::from_iterator(
            rest_e.len(),
            rest_e.iter().map(|&j| (x[j] / xa).ln() + g[(j, a)]),
        );
        let ut: Vec<f64> = cens
            .iter()
            .map(|&j| (self.u[j] / xa).ln() + g[(j, a)])
            .collect();

        let (upper, cov) = if rest_e.is_empty() {
            (ut, anchored_covariance(g, a, &cens, &cens))
        } else {
            let see = anchored_covariance(g, a, &rest_e, &rest_e);
            let (chol, _) = cholesky_with_jitter(&see)?;
            let l = chol.l_dirty();
            let z = l
                .solve_lower_triangular(&xt)
                .ok_or(Error::SingularCovariance { pivot: a })?;
            value += -0.5 * z.norm_squared()
                - 0.5 * chol_logdet(&chol)
                - 0.5 * rest_e.len() as f64 * LN_2PI;
            if cens.is_empty() {
                return Ok(value - self.normalizer.value.ln());
            }
            let sec = anchored_covariance(g, a, &rest_e, &cens);
            let proj = l
                .solve_lower_triangular(&sec)
                .ok_or(Error::SingularCovariance { pivot: a })?;
            let mean = proj.tr_mul(&z);
            let mut cov = anchored_covariance(g, a, &cens, &cens) - proj.tr_mul(&proj);
            cov = (&cov + cov.transpose()) * 0.5;
            let upper = ut.iter().zip(mean.iter()).map(|(u, m)| u - m).collect();
            (upper, cov)
        };
        if !cens.is_empty() {
            let est = self.censored_probability(&upper, &cov, stream)?;
            if !(est.value > 0.0) {
                return Ok(f64::NEG_INFINITY);
            }
            value += est.value.ln();
        }
        Ok(value - self.normalizer.value.ln())
    }

    fn censored_probability(
        &self,
        upper: &[f64],
        cov: &DMatrix<f64>,
        stream: u64,
    ) -> Result<MvnEstimate> {
        if upper.len() == 1 {
            return Ok(MvnEstimate {
                value: normal::cdf(upper[0] / cov[(0, 0)].sqrt()),
                probable_error: 0.0,
                p: self.qmc.p,
                p_prime: self.qmc.p_prime,
            });
        }
        mvn_cdf(
            upper,
            cov,
            &self.qmc.with_seed(derive_seed(self.qmc.seed, stream)),
        )
    }
}

/// Log censored density of a single observation.
pub fn censored_log_density(
    params: &VariogramParams,
    sites: &[Location],
    x: &[f64],
    u: &[f64],
    qmc: &QmcConfig,
) -> Result<f64> {
    CensoredModel::from_sites(params, sites, u, *qmc)?.log_density(x, 0)
}
