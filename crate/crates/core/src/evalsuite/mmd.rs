use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel;
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MmdEstimator {
    /// V-statistic; exactly zero on identical samples.
    #[default]
    Biased,
    /// U-statistic; may be negative before the square root clamp.
    Unbiased,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MmdConfig {
    /// Kernel bandwidths, or multipliers of the median pairwise distance
    /// when `median_scaled` is set.
    pub sigmas: Vec<f64>,
    pub median_scaled: bool,
    pub estimator: MmdEstimator,
}

impl Default for MmdConfig {
    fn default() -> Self {
        MmdConfig {
            sigmas: vec![0.5, 1.0, 2.0, 4.0, 8.0],
            median_scaled: true,
            estimator: MmdEstimator::Biased,
        }
    }
}

impl MmdConfig {
    /// Fixed bandwidths.
    pub fn fixed(sigmas: Vec<f64>) -> Self {
        MmdConfig {
            sigmas,
            median_scaled: false,
            estimator: MmdEstimator::Biased,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigmas.is_empty() || self.sigmas.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidConfig("mmd sigmas must be positive and non-empty".into()));
        }
        Ok(())
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median Euclidean distance over distinct pairs of the pooled sample.
pub fn median_pairwise_distance(x: &Matrix, y: &Matrix) -> f64 {
    let rows: Vec<&[f64]> = (0..x.rows).map(|r| x.row(r)).chain((0..y.rows).map(|r| y.row(r))).collect();
    let n = rows.len();
    let mut d: Vec<f64> = parallel::map_indices(n, n * x.cols, |i| {
        (i + 1..n).map(|j| sq_dist(rows[i], rows[j]).sqrt()).collect::<Vec<f64>>()
    })
    .into_iter()
    .flatten()
    .collect();
    if d.is_empty() {
        return 0.0;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    *m
}

/// `Σ_{i,j} k(a_i, b_j)`, skipping `i == j` when `skip_diag`.
fn kernel_sum(a: &Matrix, b: &Matrix, inv_sq: &[f64], skip_diag: bool) -> f64 {
    parallel::map_indices(a.rows, b.rows * a.cols, |i| {
        let x = a.row(i);
        (0..b.rows)
            .filter(|&j| !(skip_diag && i == j))
            .map(|j| {
                let d = sq_dist(x, b.row(j));
                inv_sq.iter().map(|s| (-d * s).exp()).sum::<f64>()
            })
            .sum::<f64>()
    })
    .into_iter()
    .sum()
}

/// Maximum mean discrepancy between rows of `x` and rows of `y` under a sum
/// of Gaussian kernels. Returns `sqrt(max(0, MMD²))`.
pub fn mmd(x: &Matrix, y: &Matrix, cfg: &MmdConfig) -> Result<f64> {
    cfg.validate()?;
    if x.rows == 0 || y.rows == 0 {
        return Err(Error::EmptySample("mmd input"));
    }
    if x.cols != y.cols {
        return Err(Error::shape("mmd feature width", x.cols, y.cols));
    }
    let scale = if cfg.median_scaled {
        let m = median_pairwise_distance(x, y);
        if m > 0.0 { m } else { 1.0 }
    } else {
        1.0
    };
    let inv_sq: Vec<f64> = cfg.sigmas.iter().map(|s| 1.0 / (s * scale).powi(2)).collect();
    let (n, m) = (x.rows as f64, y.rows as f64);
    let sq = match cfg.estimator {
        MmdEstimator::Biased => {
            kernel_sum(x, x, &inv_sq, false) / (n * n) + kernel_sum(y, y, &inv_sq, false) / (m * m)
                - 2.0 * kernel_sum(x, y, &inv_sq, false) / (n * m)
        }
        MmdEstimator::Unbiased => {
            if x.rows < 2 || y.rows < 2 {
                return Err(Error::TooFewSamples("unbiased mmd needs 2 rows per sample".into()));
            }
            kernel_sum(x, x, &inv_sq, true) / (n * (n - 1.0))
                + kernel_sum(y, y, &inv_sq, true) / (m * (m - 1.0))
                - 2.0 * kernel_sum(x, y, &inv_sq, false) / (n * m)
        }
    };
    Ok(sq.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn identical_samples_give_zero() {
        let x = m(&[&[0.1, 0.2], &[0.5, 0.9], &[0.3, 0.3]]);
        assert_eq!(mmd(&x, &x, &MmdConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn two_points() {
        let v = mmd(&m(&[&[0.0]]), &m(&[&[1.0]]), &MmdConfig::fixed(vec![1.0])).unwrap();
        assert!((v - (2.0 - 2.0 * (-1.0f64).exp()).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn empty_is_rejected() {
        let e = mmd(&Matrix::zeros(0, 2), &m(&[&[1.0, 0.0]]), &MmdConfig::default());
        assert!(matches!(e, Err(Error::EmptySample(_))));
    }

    #[test]
    fn median_of_pooled_pairs() {
        let x = m(&[&[0.0], &[1.0]]);
        let y = m(&[&[3.0]]);
        // distances 1, 3, 2
        assert_eq!(median_pairwise_distance(&x, &y), 2.0);
    }
}
