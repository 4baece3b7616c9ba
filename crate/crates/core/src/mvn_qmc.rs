//! Multivariate normal probabilities by randomly shifted rank-1 lattice rules.
//!
//! The estimator is the separation-of-variables scheme with variable
//! prioritisation: the covariance is factorized with a pivoted Cholesky
//! decomposition that at each step promotes the remaining variable with the
//! smallest conditional probability, and the resulting sequential integrand is
//! averaged over a rank-1 lattice passed through the baker's transform. Each of
//! the `p'` random shifts yields an unbiased replicate; their spread gives the
//! probable error.

use std::collections::HashMap;

use nalgebra::DMatrix;
use once_cell::sync::Lazy;
use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::asymmetry;
use crate::normal;

/// Multiplier applied to the standard error of the shift average.
pub const PROBABLE_ERROR_MULTIPLIER: f64 = 3.0;

/// Sample sizes and seed for one QMC evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QmcConfig {
    /// Prime number of lattice points per shift.
    pub p: usize,
    /// Number of random shifts.
    pub p_prime: usize,
    pub seed: u64,
}

impl Default for QmcConfig {
    fn default() -> Self {
        Self {
            p: 499,
            p_prime: 10,
            seed: 0,
        }
    }
}

impl QmcConfig {
    pub fn new(p: usize, p_prime: usize, seed: u64) -> Self {
        Self { p, p_prime, seed }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !is_prime(self.p) {
            return Err(Error::Domain(format!("p = {} is not prime", self.p)));
        }
        if self.p_prime < 2 {
            return Err(Error::Domain(format!(
                "at least two random shifts are needed, got {}",
                self.p_prime
            )));
        }
        Ok(())
    }
}

/// QMC estimate of a normal probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MvnEstimate {
    pub value: f64,
    pub probable_error: f64,
    pub p: usize,
    pub p_prime: usize,
}

impl MvnEstimate {
    fn exact(value: f64, cfg: &QmcConfig) -> Self {
        Self {
            value,
            probable_error: 0.0,
            p: cfg.p,
            p_prime: cfg.p_prime,
        }
    }
}

pub fn is_prime(n: usize) -> bool {
    if n < 2 {
        return false;
    }
    if n < 4 {
        return true;
    }
    if n.is_multiple_of(2) {
        return false;
    }
    let mut d = 3;
    while d * d <= n {
        if n.is_multiple_of(d) {
            return false;
        }
        d += 2;
    }
    true
}

/// A rank-1 lattice with its random shifts.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeRule {
    pub p: usize,
    pub v: Vec<usize>,
    pub shifts: Vec<Vec<f64>>,
}

impl LatticeRule {
    pub fn new(p: usize, dim: usize, p_prime: usize, seed: u64) -> Result<Self> {
        QmcConfig::new(p, p_prime, seed).validate()?;
        let v = generating_vector(p, dim.max(1));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shifts = (0..p_prime)
            .map(|_| (0..v.len()).map(|_| rng.gen::<f64>()).collect())
            .collect();
        Ok(Self { p, v, shifts })
    }

    pub fn points(&self, shift: usize) -> Result<Vec<Vec<f64>>> {
        lattice_points(self.p, &self.v, &self.shifts[shift])
    }
}

/// Lattice points `|2·frac(q v / p + Δ) − 1|` for `q = 1..=p`.
pub fn lattice_points(p: usize, v: &[usize], shift: &[f64]) -> Result<Vec<Vec<f64>>> {
    if !is_prime(p) {
        return Err(Error::Domain(format!("p = {p} is not prime")));
    }
    if v.len() != shift.len() {
        return Err(Error::Domain(
            "generating vector and shift differ in length".into(),
        ));
    }
    let pf = p as f64;
    Ok((1..=p)
        .map(|q| {
            v.iter()
                .zip(shift)
                .map(|(&vk, &dk)| baker(((q * vk) % p) as f64 / pf + dk))
                .collect()
        })
        .collect())
}

#[inline]
fn baker(t: f64) -> f64 {
    (2.0 * t.fract() - 1.0).abs()
}

/// Product weight of coordinate `j` in the worst-case criterion.
fn coordinate_weight(j: usize) -> f64 {
    1.0 / ((j + 1) * (j + 1)) as f64
}

/// Weighted worst-case `P_2` error of the lattice with generating vector `v`.
///
/// `P_2 = −1 + p⁻¹ Σ_k Π_j (1 + w_j 2π² B₂({k v_j / p}))` with `B₂(x) = x² − x + 1/6`
/// and product weights `w_j = 1/(j+1)²`.
pub fn p2_criterion(p: usize, v: &[usize]) -> f64 {
    let two_pi2 = 2.0 * std::f64::consts::PI * std::f64::consts::PI;
    let weights: Vec<f64> = (0..v.len())
        .map(|j| two_pi2 * coordinate_weight(j))
        .collect();
    let pf = p as f64;
    let mut total = 0.0;
    for k in 0..p {
        let mut prod = 1.0;
        for (j, &vj) in v.iter().enumerate() {
            let x = ((k * vj) % p) as f64 / pf;
            prod *= 1.0 + weights[j] * (x * x - x + 1.0 / 6.0);
        }
        total += prod;
    }
    total / pf - 1.0
}

/// Korobov vector `(1, g, g², …) mod p`.
pub fn korobov_vector(p: usize, g: usize, dim: usize) -> Vec<usize> {
    let mut v = Vec::with_capacity(dim);
    let mut cur = 1usize;
    for _ in 0..dim {
        v.push(cur);
        cur = (cur * g) % p;
    }
    v
}

const EXHAUSTIVE_BUDGET: usize = 50_000_000;
const RANDOM_CANDIDATES: usize = 128;

static VECTOR_CACHE: Lazy<Mutex<HashMap<(usize, usize), Vec<usize>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

/// Deterministic Korobov generating vector for `p` points in `dim` dimensions.
///
/// The Korobov parameter minimizes [`p2_criterion`] over every `g ∈ 1..p` when
/// the search is small, otherwise over a fixed pseudo-random subset of candidates.
pub fn generating_vector(p: usize, dim: usize) -> Vec<usize> {
    if dim <= 1 || p < 3 {
        return vec![1; dim.max(1)];
    }
    if let Some(v) = VECTOR_CACHE.lock().get(&(p, dim)) {
        return v.clone();
    }
    let candidates: Vec<usize> = if (p - 1) * p * dim <= EXHAUSTIVE_BUDGET {
        (1..p).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64((p as u64) << 20 ^ dim as u64);
        (0..RANDOM_CANDIDATES)
            .map(|_| rng.gen_range(2..p))
            .collect()
    };
    let mut best = (f64::INFINITY, 1usize);
    for g in candidates {
        let crit = p2_criterion(p, &korobov_vector(p, g, dim));
        if crit < best.0 || (crit == best.0 && g < best.1) {
            best = (crit, g);
        }
    }
    let v = korobov_vector(p, best.1, dim);
    VECTOR_CACHE.lock().insert((p, dim), v.clone());
    v
}

/// Pivoted lower factor in packed row storage.
struct PivotedFactor {
    n: usize,
    /// Row `i` holds `L[i][0..i]` starting at `i*(i-1)/2`.
    lower: Vec<f64>,
    diag: Vec<f64>,
    bounds: Vec<f64>,
}

impl PivotedFactor {
    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        let start = i * (i.saturating_sub(1)) / 2;
        &self.lower[start..start + i]
    }
}

/// Cholesky factorization with Genz–Bretz variable prioritisation.
fn prioritised_factor(upper: &[f64], sigma: &DMatrix<f64>) -> Result<PivotedFactor> {
    let n = upper.len();
    let mut c = sigma.clone();
    let mut b = upper.to_vec();
    let mut order: Vec<usize> = (0..n).collect();
    let mut l = DMatrix::<f64>::zeros(n, n);
    let mut y = vec![0.0; n];
    let scale = sigma.diagonal().iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let tol = 1e-13 * scale.max(f64::MIN_POSITIVE);

    for j in 0..n {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in j..n {
            let mut var = c[(i, i)];
            let mut shift = 0.0;
            for k in 0..j {
                var -= l[(i, k)] * l[(i, k)];
                shift += l[(i, k)] * y[k];
            }
            let prob = if var > tol {
                normal::cdf((b[i] - shift) / var.sqrt())
            } else if b[i] - shift >= 0.0 {
                1.0
            } else {
                0.0
            };
            let key = (prob, order[i], i);
            if best.is_none_or(|(bp, bo, _)| (prob, order[i]) < (bp, bo)) {
                best = Some(key);
            }
        }
        let (_, _, piv) = best.expect("non-empty candidate set");
        if piv != j {
            c.swap_rows(j, piv);
            c.swap_columns(j, piv);
            l.swap_rows(j, piv);
            b.swap(j, piv);
            order.swap(j, piv);
        }
        let mut d = c[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > tol) {
            return Err(Error::SingularCovariance { pivot: order[j] });
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = c[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
        let mut shift = 0.0;
        for k in 0..j {
            shift += l[(j, k)] * y[k];
        }
        let t = (b[j] - shift) / d;
        let mass = normal::cdf(t);
        // Mean of a standard normal truncated to (−∞, t].
        y[j] = if mass > 1e-300 {
            -normal::pdf(t) / mass
        } else {
            t
        };
    }

    let mut lower = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for k in 0..i {
            lower.push(l[(i, k)]);
        }
    }
    Ok(PivotedFactor {
        n,
        lower,
        diag: (0..n).map(|i| l[(i, i)]).collect(),
        bounds: b,
    })
}

fn validate_problem(upper: &[f64], sigma: &DMatrix<f64>) -> Result<()> {
    let n = upper.len();
    if sigma.nrows() != n || sigma.ncols() != n {
        return Err(Error::Domain(format!(
            "covariance is {}x{} but the bound has {} entries",
            sigma.nrows(),
            sigma.ncols(),
            n
        )));
    }
    if upper.iter().any(|v| v.is_nan()) || sigma.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite input to mvn_cdf".into()));
    }
    if asymmetry(sigma) > 1e-10 {
        return Err(Error::Domain("covariance matrix is not symmetric".into()));
    }
    Ok(())
}

/// Estimate `P(X ≤ upper)` for `X ~ N(0, sigma)`.
///
/// `+∞` bounds marginalize their variable out; any `−∞` bound gives zero.
pub fn mvn_cdf(upper: &[f64], sigma: &DMatrix<f64>, cfg: &QmcConfig) -> Result<MvnEstimate> {
    cfg.validate()?;
    validate_problem(upper, sigma)?;
    if upper.contains(&f64::NEG_INFINITY) {
        return Ok(MvnEstimate::exact(0.0, cfg));
    }
    let keep: Vec<usize> = (0..upper.len())
        .filter(|&i| upper[i] != f64::INFINITY)
        .collect();
    if keep.is_empty() {
        return Ok(MvnEstimate::exact(1.0, cfg));
    }
    let (bounds, cov) = if keep.len() == upper.len() {
        (upper.to_vec(), sigma.clone())
    } else {
        let b: Vec<f64> = keep.iter().map(|&i| upper[i]).collect();
        let m = DMatrix::from_fn(keep.len(), keep.len(), |r, c| sigma[(keep[r], keep[c])]);
        (b, m)
    };
    for (i, &k) in keep.iter().enumerate() {
        if !(cov[(i, i)] > 0.0) {
            return Err(Error::SingularCovariance { pivot: k });
        }
    }
    let factor = prioritised_factor(&bounds, &cov).map_err(|e| match e {
        Error::SingularCovariance { pivot } => Error::SingularCovariance { pivot: keep[pivot] },
        other => other,
    })?;
    Ok(integrate(&factor, cfg))
}

/// Dot product with four independent accumulators.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn integrate(f: &PivotedFactor, cfg: &QmcConfig) -> MvnEstimate {
    let n = f.n;
    let e1 = normal::cdf(f.bounds[0] / f.diag[0]);
    if n == 1 {
        return MvnEstimate::exact(e1, cfg);
    }
    let sampled = n - 1;
    let v = generating_vector(cfg.p, sampled);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let inv_p = 1.0 / cfg.p as f64;
    let mut mean = 0.0;
    let mut var_of_mean = 0.0;
    let mut y = vec![0.0; sampled];
    let mut residue = vec![0usize; sampled];
    let mut shift = vec![0.0; sampled];

    for rep in 1..=cfg.p_prime {
        for s in shift.iter_mut() {
            *s = rng.gen::<f64>();
        }
        residue.iter_mut().for_each(|r| *r = 0);
        let mut shift_mean = 0.0;
        for q in 1..=cfg.p {
            for (r, &vk) in residue.iter_mut().zip(&v) {
                *r += vk;
                if *r >= cfg.p {
                    *r -= cfg.p;
                }
            }
            let mut e = e1;
            let mut value = e1;
            for i in 1..n {
                if value == 0.0 {
                    break;
                }
                let mut t = residue[i - 1] as f64 * inv_p + shift[i - 1];
                if t >= 1.0 {
                    t -= 1.0;
                }
                let w = (2.0 * t - 1.0).abs();
                y[i - 1] = normal::quantile_fast((w * e).clamp(1e-300, 1.0 - 1e-16));
                let row = f.row(i);
                let dot = dot(row, &y[..i]);
                e = normal::cdf_fast((f.bounds[i] - dot) / f.diag[i]);
                value *= e;
            }
            shift_mean += (value - shift_mean) / q as f64;
        }
        // Running mean and variance-of-the-mean recursion over shifts.
        let k = rep as f64;
        let delta = (shift_mean - mean) / k;
        mean += delta;
        var_of_mean = (k - 2.0) * var_of_mean / k + delta * delta;
    }
    MvnEstimate {
        value: mean.clamp(0.0, 1.0),
        probable_error: PROBABLE_ERROR_MULTIPLIER * var_of_mean.max(0.0).sqrt(),
        p: cfg.p,
        p_prime: cfg.p_prime,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn equicorrelated(n: usize, rho: f64) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { rho })
    }

    /// Adaptive Simpson quadrature.
    fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        fn rec(
            f: &dyn Fn(f64) -> f64,
            a: f64,
            b: f64,
            fa: f64,
            fm: f64,
            fb: f64,
            whole: f64,
            tol: f64,
            depth: u32,
        ) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (f(lm), f(rm));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                return left + right + (left + right - whole) / 15.0;
            }
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
        let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        rec(f, a, b, fa, fm, fb, whole, tol, 40)
    }

    /// Equicorrelated probability reduced to a one-dimensional integral over the common factor.
    fn equicorrelated_oracle(upper: &[f64], rho: f64) -> f64 {
        let f = |z: f64| {
            normal::pdf(z)
                * upper
                    .iter()
                    .map(|&b| normal::cdf((b - rho.sqrt() * z) / (1.0 - rho).sqrt()))
                    .product::<f64>()
        };
        adaptive_simpson(&f, -12.0, 12.0, 1e-12)
    }

    #[test]
    fn lattice_hand_example() {
        let pts = lattice_points(3, &[1, 2], &[0.0, 0.0]).unwrap();
        let third = 1.0 / 3.0;
        let expected = [[third, third], [third, third], [1.0, 1.0]];
        for (p, e) in pts.iter().zip(expected.iter()) {
            assert!((p[0] - e[0]).abs() < 1e-15 && (p[1] - e[1]).abs() < 1e-15);
        }
        assert!(lattice_points(4, &[1], &[0.0]).is_err());
    }

    #[test]
    fn lattice_symmetric_across_dimensions() {
        let pts = lattice_points(7, &[1, 1, 1], &[0.0; 3]).unwrap();
        for (q, pt) in pts.iter().enumerate() {
            let expect = (2.0 * ((q + 1) as f64 / 7.0).fract() - 1.0).abs();
            assert!(pt.iter().all(|&c| (c - expect).abs() < 1e-15));
        }
    }

    #[test]
    fn generating_vector_basics() {
        assert_eq!(generating_vector(499, 1), vec![1]);
        let a = generating_vector(499, 10);
        assert_eq!(a, generating_vector(499, 10));
        assert!(a.iter().all(|&c| (1..499).contains(&c)));
        let big = generating_vector(4999, 60);
        assert!(big.iter().all(|&c| (1..4999).contains(&c)));
    }

    #[test]
    fn generating_vector_is_exhaustive_minimizer_in_two_dims() {
        // Independent brute force of the weighted P2 criterion over every generator.
        let p = 499usize;
        let two_pi2 = 2.0 * std::f64::consts::PI.powi(2);
        let crit = |g: usize| {
            let mut sum = 0.0;
            for k in 0..p {
                let x0 = (k as f64 / p as f64).fract();
                let x1 = ((k * g) % p) as f64 / p as f64;
                let b2 = |x: f64| x * x - x + 1.0 / 6.0;
                sum += (1.0 + two_pi2 * b2(x0)) * (1.0 + two_pi2 * 0.25 * b2(x1));
            }
            sum / p as f64 - 1.0
        };
        let best = (1..p)
            .map(|g| (crit(g), g))
            .fold(
                (f64::INFINITY, 0),
                |acc, c| if c.0 < acc.0 { c } else { acc },
            );
        let v = generating_vector(p, 2);
        assert_eq!(v[0], 1);
        assert!((crit(v[1]) - best.0).abs() <= 1e-12 * best.0.abs());
    }

    #[test]
    fn univariate_and_independent_cases() {
        let cfg = QmcConfig::new(101, 4, 3);
        let one = mvn_cdf(&[0.0], &DMatrix::identity(1, 1), &cfg).unwrap();
        assert!((one.value - 0.5).abs() < 1e-15);
        let two = mvn_cdf(&[0.0, 0.0], &DMatrix::identity(2, 2), &cfg).unwrap();
        assert!((two.value - 0.25).abs() < 1e-12);
    }

    #[test]
    fn equicorrelated_matches_quadrature() {
        let sigma = equicorrelated(3, 0.5);
        let cfg = QmcConfig::new(4999, 10, 11);
        for upper in [[0.0, 0.0, 0.0], [0.5, -0.3, 1.0]] {
            let est = mvn_cdf(&upper, &sigma, &cfg).unwrap();
            let oracle = equicorrelated_oracle(&upper, 0.5);
            assert!(
                (est.value - oracle).abs() < 1e-3,
                "{} vs {oracle}",
                est.value
            );
        }
        // Orthant probability has the closed form 1/8 + 3 asin(ρ)/(4π) = 1/4.
        assert!((equicorrelated_oracle(&[0.0; 3], 0.5) - 0.25).abs() < 1e-10);
    }

    #[test]
    fn infinite_bounds() {
        let sigma = equicorrelated(3, 0.3);
        let cfg = QmcConfig::new(101, 4, 3);
        let zero = mvn_cdf(&[0.0, f64::NEG_INFINITY, 1.0], &sigma, &cfg).unwrap();
        assert_eq!(zero.value, 0.0);
        let marg = mvn_cdf(&[0.3, f64::INFINITY, f64::INFINITY], &sigma, &cfg).unwrap();
        assert!((marg.value - normal::cdf(0.3)).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_input() {
        let cfg = QmcConfig::new(101, 4, 3);
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.2, 1.0]);
        assert!(matches!(
            mvn_cdf(&[0.0, 0.0], &asym, &cfg),
            Err(Error::Domain(_))
        ));
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            mvn_cdf(&[0.0, 0.0], &singular, &cfg),
            Err(Error::SingularCovariance { .. })
        ));
        assert!(mvn_cdf(&[0.0], &DMatrix::identity(1, 1), &QmcConfig::new(100, 4, 0)).is_err());
        assert!(mvn_cdf(&[0.0], &DMatrix::identity(1, 1), &QmcConfig::new(101, 1, 0)).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let sigma = equicorrelated(5, 0.4);
        let cfg = QmcConfig::new(101, 5, 9);
        let a = mvn_cdf(&[0.1, 0.2, -0.1, 0.5, 0.0], &sigma, &cfg).unwrap();
        let b = mvn_cdf(&[0.1, 0.2, -0.1, 0.5, 0.0], &sigma, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn running_variance_matches_batch() {
        // The recursion over shifts must reproduce s²/n of the shift means.
        let xs = [0.31, 0.29, 0.35, 0.27, 0.33, 0.30];
        let (mut mean, mut v) = (0.0, 0.0);
        for (i, &x) in xs.iter().enumerate() {
            let k = (i + 1) as f64;
            let d = (x - mean) / k;
            mean += d;
            v = (k - 2.0) * v / k + d * d;
        }
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let s2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((mean - m).abs() < 1e-15);
        assert!((v - s2 / n).abs() < 1e-15);
    }

    fn test_cov() -> DMatrix<f64> {
        let a = DMatrix::from_fn(5, 5, |i, j| {
            ((i * 7 + j * 3) % 5) as f64 * 0.2 + if i == j { 1.0 } else { 0.0 }
        });
        &a * a.transpose() / 3.0
    }

    #[test]
    fn error_shrinks_with_more_shifts() {
        let sigma = test_cov();
        let upper = [0.2, -0.1, 0.4, 0.0, 0.3];
        let sd = |shifts: usize| {
            let vals: Vec<f64> = (0..100)
                .map(|s| {
                    mvn_cdf(&upper, &sigma, &QmcConfig::new(31, shifts, s))
                        .unwrap()
                        .value
                })
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (vals.len() - 1) as f64).sqrt()
        };
        let ratio = sd(4) / sd(8);
        assert!(
            (ratio - 2f64.sqrt()).abs() < 0.25 * 2f64.sqrt(),
            "ratio {ratio}"
        );
    }

    #[test]
    fn diagonal_factorizes() {
        let sigma = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 4.0, 0.25]));
        let upper = [0.3, 1.0, -0.2];
        let est = mvn_cdf(&upper, &sigma, &QmcConfig::new(101, 6, 1)).unwrap();
        let exact = normal::cdf(0.3) * normal::cdf(0.5) * normal::cdf(-0.4);
        assert!((est.value - exact).abs() <= 3.0 * est.probable_error + 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn monotone_in_upper(i in 0usize..5, bump in 0.05f64..1.0, seed in 0u64..1000) {
            let sigma = test_cov();
            let upper = [0.2, -0.1, 0.4, 0.0, 0.3];
            let cfg = QmcConfig::new(101, 6, seed);
            let base = mvn_cdf(&upper, &sigma, &cfg).unwrap();
            let mut raised = upper;
            raised[i] += bump;
            let up = mvn_cdf(&raised, &sigma, &cfg).unwrap();
            prop_assert!(up.value >= base.value - base.probable_error - up.probable_error);
        }

        #[test]
        fn permutation_invariant(perm in Just(vec![0usize, 1, 2, 3, 4]).prop_shuffle(), seed in 0u64..1000) {
            let sigma = test_cov();
            let upper = [0.2, -0.1, 0.4, 0.0, 0.3];
            let cfg = QmcConfig::new(101, 6, seed);
            let base = mvn_cdf(&upper, &sigma, &cfg).unwrap();
            let pu: Vec<f64> = perm.iter().map(|&i| upper[i]).collect();
            let ps = DMatrix::from_fn(5, 5, |r, c| sigma[(perm[r], perm[c])]);
            let other = mvn_cdf(&pu, &ps, &cfg).unwrap();
            prop_assert!((base.value - other.value).abs() < 3.0 * (base.probable_error + other.probable_error) + 1e-12);
        }

        #[test]
        fn points_in_unit_cube(seed in 0u64..500) {
            let rule = LatticeRule::new(31, 4, 2, seed).unwrap();
            for s in 0..2 {
                for pt in rule.points(s).unwrap() {
                    prop_assert!(pt.iter().all(|&c| (0.0..=1.0).contains(&c)));
                }
            }
        }
    }
}
