//! Power semi-variogram with geometric anisotropy.
//!
//! `γ(h) = c · (‖Ω h‖ / τ)^κ` where `Ω` rotates by `η` and stretches the second
//! axis by `a`, and `c` is `1/2` when `half_factor` is set and `1` otherwise.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, Matrix2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A site with planar coordinates in kilometres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub id: String,
    pub x: f64,
    pub y: f64,
}

impl Location {
    pub fn new(id: impl Into<String>, x: f64, y: f64) -> Self {
        Self {
            id: id.into(),
            x,
            y,
        }
    }
}

/// Dependence parameters `(κ, τ, η, a)` plus the half-factor convention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariogramParams {
    pub kappa: f64,
    pub tau: f64,
    pub eta: f64,
    pub a: f64,
    pub half_factor: bool,
}

impl Default for VariogramParams {
    fn default() -> Self {
        Self::isotropic(1.0, 1.0)
    }
}

impl VariogramParams {
    /// Isotropic model with the half-factor convention.
    pub fn isotropic(kappa: f64, tau: f64) -> Self {
        Self {
            kappa,
            tau,
            eta: 0.0,
            a: 1.0,
            half_factor: true,
        }
    }

    pub fn with_anisotropy(mut self, eta: f64, a: f64) -> Self {
        self.eta = eta;
        self.a = a;
        self
    }

    pub fn with_half_factor(mut self, half_factor: bool) -> Self {
        self.half_factor = half_factor;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa <= 2.0) {
            return Err(Error::Domain(format!(
                "kappa must satisfy 0 < kappa <= 2, got {}",
                self.kappa
            )));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Domain(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        check_anisotropy(self.eta, self.a)
    }

    fn scale(&self) -> f64 {
        if self.half_factor {
            0.5
        } else {
            1.0
        }
    }

    /// Semi-variogram at lag `h`, assuming valid parameters.
    #[inline]
    pub fn gamma_unchecked(&self, h: [f64; 2]) -> f64 {
        let (s, c) = self.eta.sin_cos();
        let u = c * h[0] - s * h[1];
        let v = self.a * (s * h[0] + c * h[1]);
        let norm = (u * u + v * v).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        self.scale() * (norm / self.tau).powf(self.kappa)
    }

    /// Semi-variogram between two sites.
    #[inline]
    pub fn gamma_between(&self, s: &Location, t: &Location) -> f64 {
        self.gamma_unchecked([s.x - t.x, s.y - t.y])
    }

    /// Semi-variogram as a function of the distance only; exact when `a = 1`.
    pub fn gamma_of_distance(&self, distance: f64) -> f64 {
        self.gamma_unchecked([distance, 0.0])
    }
}

fn check_anisotropy(eta: f64, a: f64) -> Result<()> {
    if !(eta > -FRAC_PI_2 && eta <= FRAC_PI_2) {
        return Err(Error::Domain(format!(
            "eta must lie in (-pi/2, pi/2], got {eta}"
        )));
    }
    if !(a >= 1.0 && a.is_finite()) {
        return Err(Error::Domain(format!("a must satisfy a >= 1, got {a}")));
    }
    Ok(())
}

/// `Ω = [[cos η, −sin η], [a sin η, a cos η]]`.
pub fn anisotropy_matrix(eta: f64, a: f64) -> Result<Matrix2<f64>> {
    check_anisotropy(eta, a)?;
    let (s, c) = eta.sin_cos();
    Ok(Matrix2::new(c, -s, a * s, a * c))
}

pub fn eval_variogram(params: &VariogramParams, h: [f64; 2]) -> Result<f64> {
    params.validate()?;
    Ok(params.gamma_unchecked(h))
}

/// Matrix of pairwise semi-variogram values, with any coincident site pairs.
#[derive(Debug, Clone)]
pub struct GammaMatrix {
    pub matrix: DMatrix<f64>,
    /// Index pairs `(i, j)`, `i < j`, of sites sharing coordinates.
    pub duplicate_pairs: Vec<(usize, usize)>,
}

pub fn gamma_matrix(params: &VariogramParams, sites: &[Location]) -> Result<GammaMatrix> {
    params.validate()?;
    if sites.len() < 2 {
        return Err(Error::Precondition(
            "at least two sites are required".into(),
        ));
    }
    let n = sites.len();
    let mut matrix = DMatrix::zeros(n, n);
    let mut duplicate_pairs = Vec::new();
    for j in 0..n {
        for i in (j + 1)..n {
            if sites[i].x == sites[j].x && sites[i].y == sites[j].y {
                duplicate_pairs.push((j, i));
            }
            let g = params.gamma_between(&sites[i], &sites[j]);
            matrix[(i, j)] = g;
            matrix[(j, i)] = g;
        }
    }
    if !duplicate_pairs.is_empty() {
        log::warn!(
            "{} duplicated site pair(s); dependence matrices will be singular",
            duplicate_pairs.len()
        );
    }
    Ok(GammaMatrix {
        matrix,
        duplicate_pairs,
    })
}

/// Regular `nx × ny` grid spanning `[0, extent]²`, ids `s{row}_{col}`.
pub fn regular_grid(nx: usize, ny: usize, extent_x: f64, extent_y: f64) -> Vec<Location> {
    let step = |n: usize, extent: f64| if n > 1 { extent / (n - 1) as f64 } else { 0.0 };
    let (dx, dy) = (step(nx, extent_x), step(ny, extent_y));
    let mut sites = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            sites.push(Location::new(
                format!("s{j}_{i}"),
                i as f64 * dx,
                j as f64 * dy,
            ));
        }
    }
    sites
}

/// Euclidean distance between two sites.
pub fn distance(s: &Location, t: &Location) -> f64 {
    ((s.x - t.x).powi(2) + (s.y - t.y).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn anisotropy_identity_and_rotation() {
        let m = anisotropy_matrix(0.0, 1.0).unwrap();
        assert_eq!(m, Matrix2::identity());
        let r = anisotropy_matrix(FRAC_PI_2, 1.0).unwrap();
        let expected = Matrix2::new(0.0, -1.0, 1.0, 0.0);
        assert!((r - expected).abs().max() < 1e-15);
    }

    #[test]
    fn anisotropy_elementwise() {
        let (eta, a) = (0.3_f64, 1.5);
        let m = anisotropy_matrix(eta, a).unwrap();
        assert_eq!(m[(0, 0)], eta.cos());
        assert_eq!(m[(0, 1)], -eta.sin());
        assert_eq!(m[(1, 0)], a * eta.sin());
        assert_eq!(m[(1, 1)], a * eta.cos());
    }

    #[test]
    fn anisotropy_domain() {
        assert!(anisotropy_matrix(-FRAC_PI_2, 1.0).is_err());
        assert!(anisotropy_matrix(0.0, 0.9).is_err());
    }

    #[test]
    fn variogram_values() {
        let p = VariogramParams::isotropic(1.0, 2.5);
        assert_eq!(eval_variogram(&p, [0.0, 0.0]).unwrap(), 0.0);
        assert!((eval_variogram(&p, [2.5, 0.0]).unwrap() - 0.5).abs() < 1e-15);
        let p = VariogramParams::isotropic(1.3, 2.5);
        let expected = 2f64.powf(1.3) / 2.0;
        assert!((eval_variogram(&p, [5.0, 0.0]).unwrap() - expected).abs() < 1e-14);
        let full = p.with_half_factor(false);
        assert!((eval_variogram(&full, [5.0, 0.0]).unwrap() - 2.0 * expected).abs() < 1e-14);
    }

    #[test]
    fn variogram_matches_matrix_form() {
        let p = VariogramParams::isotropic(1.4, 3.0).with_anisotropy(0.7, 2.0);
        let h = nalgebra::Vector2::new(1.2, -0.4);
        let omega = anisotropy_matrix(0.7, 2.0).unwrap();
        let expected = 0.5 * ((omega * h).norm() / 3.0).powf(1.4);
        assert!((p.gamma_unchecked([1.2, -0.4]) - expected).abs() < 1e-14);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(VariogramParams::isotropic(2.5, 1.0).validate().is_err());
        assert!(VariogramParams::isotropic(0.0, 1.0).validate().is_err());
        assert!(VariogramParams::isotropic(1.0, -1.0).validate().is_err());
        assert!(VariogramParams::isotropic(2.0, 1.0).validate().is_ok());
    }

    #[test]
    fn gamma_matrix_basics() {
        let p = VariogramParams::isotropic(1.0, 2.5);
        let sites = vec![
            Location::new("a", 0.0, 0.0),
            Location::new("b", 2.5, 0.0),
            Location::new("c", 5.0, 0.0),
        ];
        let g = gamma_matrix(&p, &sites).unwrap();
        assert!((g.matrix[(0, 1)] - 0.5).abs() < 1e-15);
        assert!((g.matrix[(0, 2)] - 2.0 * g.matrix[(0, 1)]).abs() < 1e-14);
        assert_eq!(g.matrix, g.matrix.transpose());
        assert!(g.duplicate_pairs.is_empty());
        assert!(gamma_matrix(&p, &sites[..1]).is_err());
    }

    #[test]
    fn duplicates_are_flagged() {
        let p = VariogramParams::isotropic(1.0, 2.5);
        let sites = vec![
            Location::new("a", 1.0, 1.0),
            Location::new("b", 1.0, 1.0),
            Location::new("c", 2.0, 0.0),
        ];
        let g = gamma_matrix(&p, &sites).unwrap();
        assert_eq!(g.duplicate_pairs, vec![(0, 1)]);
        assert_eq!(g.matrix[(0, 1)], 0.0);
    }

    #[test]
    fn grid_layout() {
        let g = regular_grid(10, 10, 100.0, 100.0);
        assert_eq!(g.len(), 100);
        assert_eq!((g[99].x, g[99].y), (100.0, 100.0));
        assert!((g[1].x - 100.0 / 9.0).abs() < 1e-12);
    }

    fn random_sites(coords: &[(f64, f64)]) -> Vec<Location> {
        coords
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| Location::new(i.to_string(), x, y))
            .collect()
    }

    proptest! {
        #[test]
        fn homogeneous_in_lag(kappa in 0.1f64..2.0, tau in 0.5f64..10.0,
                              hx in -5.0f64..5.0, hy in -5.0f64..5.0, t in 0.01f64..20.0) {
            let p = VariogramParams::isotropic(kappa, tau);
            let g = p.gamma_unchecked([hx, hy]);
            let gt = p.gamma_unchecked([t * hx, t * hy]);
            prop_assert!((gt - t.powf(kappa) * g).abs() <= 1e-10 * (1.0 + gt.abs()));
        }

        #[test]
        fn rotation_invariant_without_stretch(eta in -1.5f64..1.5,
                                              coords in prop::collection::vec((0.0f64..10.0, 0.0f64..10.0), 2..8)) {
            let sites = random_sites(&coords);
            let base = gamma_matrix(&VariogramParams::isotropic(1.2, 2.0), &sites).unwrap().matrix;
            let rotated = gamma_matrix(&VariogramParams::isotropic(1.2, 2.0).with_anisotropy(eta, 1.0), &sites)
                .unwrap().matrix;
            prop_assert!((base - rotated).abs().max() < 1e-12);
        }

        #[test]
        fn conditionally_negative_definite(kappa in 0.1f64..1.99, eta in -1.5f64..1.5, a in 1.0f64..3.0,
                                           coords in prop::collection::vec((0.0f64..10.0, 0.0f64..10.0), 3..10)) {
            let sites = random_sites(&coords);
            let p = VariogramParams::isotropic(kappa, 2.0).with_anisotropy(eta, a);
            let g = gamma_matrix(&p, &sites).unwrap().matrix;
            let n = g.nrows();
            let centering = DMatrix::<f64>::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
            let centered = &centering * &g * &centering;
            let eig = centered.symmetric_eigen();
            let scale = g.abs().max().max(1.0);
            for &ev in eig.eigenvalues.iter() {
                prop_assert!(ev <= 1e-9 * scale, "eigenvalue {}", ev);
            }
        }
    }
}
