use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observations in rows, one column per site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub site_ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn new(site_ids: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        for (m, r) in rows.iter().enumerate() {
            if r.len() != site_ids.len() {
                return Err(Error::Domain(format!(
                    "row {m} has {} values for {} sites",
                    r.len(),
                    site_ids.len()
                )));
            }
            if let Some(j) = r.iter().position(|v| !v.is_finite()) {
                return Err(Error::Domain(format!(
                    "row {m}, site `{}`: non-finite value",
                    site_ids[j]
                )));
            }
        }
        Ok(Self { site_ids, rows })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_sites(&self) -> usize {
        self.site_ids.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    fn with_rows(&self, rows: Vec<Vec<f64>>) -> Self {
        Self {
            site_ids: self.site_ids.clone(),
            rows,
        }
    }
}

/// Ranks from 1 to n, ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Column-wise rank transform to the unit Pareto scale, `1 / (1 − rank/(N+1))`.
pub fn transform_margins(data: &Dataset) -> Result<Dataset> {
    let n = data.n_rows();
    if n < 2 {
        return Err(Error::Precondition(format!(
            "at least two observations are required, got {n}"
        )));
    }
    let mut rows = vec![vec![0.0; data.n_sites()]; n];
    for j in 0..data.n_sites() {
        let col = data.column(j);
        if col.iter().all(|&v| v == col[0]) {
            return Err(Error::Domain(format!(
                "site `{}` has a constant column",
                data.site_ids[j]
            )));
        }
        for (m, r) in average_ranks(&col).into_iter().enumerate() {
            rows[m][j] = 1.0 / (1.0 - r / (n as f64 + 1.0));
        }
    }
    Ok(data.with_rows(rows))
}

/// Probability integral transform from unit Fréchet to unit Pareto margins.
pub fn unit_frechet_to_pareto(data: &Dataset) -> Dataset {
    let rows = data
        .rows
        .iter()
        .map(|r| r.iter().map(|&z| 1.0 / -(-1.0 / z).exp_m1()).collect())
        .collect();
    data.with_rows(rows)
}
