use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};

const JITTER_LADDER: [f64; 6] = [0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8];

/// Cholesky factorization that retries with a growing diagonal jitter
/// (relative to the largest diagonal entry). Returns the factor and the jitter used.
pub fn cholesky_with_jitter(m: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let scale = m.diagonal().iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    for &rel in JITTER_LADDER.iter() {
        let jitter = rel * scale;
        let mut trial = m.clone();
        if jitter > 0.0 {
            for i in 0..trial.nrows() {
                trial[(i, i)] += jitter;
            }
        }
        if let Some(chol) = Cholesky::new(trial) {
            if jitter > 0.0 {
                log::warn!("cholesky needed diagonal jitter {jitter:e}");
            }
            return Ok((chol, jitter));
        }
    }
    Err(Error::SingularCovariance {
        pivot: first_bad_pivot(m),
    })
}

/// Index of the first non-positive pivot of an unpivoted Cholesky sweep.
fn first_bad_pivot(m: &DMatrix<f64>) -> usize {
    let n = m.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d.is_nan() || d <= 0.0 {
            return j;
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    n
}

/// `log det` from a Cholesky factor.
pub fn chol_logdet(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol
        .l_dirty()
        .diagonal()
        .iter()
        .map(|d| d.ln())
        .sum::<f64>()
}

/// Largest absolute asymmetry relative to the largest entry.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.abs().max().max(f64::MIN_POSITIVE);
    let mut worst = 0.0_f64;
    for j in 0..m.ncols() {
        for i in (j + 1)..m.nrows() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst / scale
}
