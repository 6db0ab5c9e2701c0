use serde::{Deserialize, Serialize};

use crate::datamodel::MixedBatch;
use crate::dualvae::Domain;
use crate::error::{Error, Result};

/// One `(feature, hour)` column of a mixed batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnRef {
    pub domain: Domain,
    pub feature: usize,
    pub t: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub columns: Vec<ColumnRef>,
    pub values: Vec<Vec<f64>>,
    /// Columns with zero variance; their correlations are reported as 0.
    pub degenerate: Vec<bool>,
}

fn column(batch: &MixedBatch, c: &ColumnRef) -> Result<Vec<f64>> {
    let x = match c.domain {
        Domain::Continuous => &batch.cont,
        Domain::Discrete => &batch.disc,
    };
    if c.feature >= x.d || c.t >= x.t {
        return Err(Error::shape(
            "correlation column",
            format!("feature < {}, t < {}", x.d, x.t),
            format!("feature {}, t {}", c.feature, c.t),
        ));
    }
    Ok((0..x.n).map(|i| x.get(i, c.t, c.feature)).collect())
}

/// Pearson correlation across patients between every pair of selected columns.
pub fn pearson_correlation_matrix(batch: &MixedBatch, selection: &[ColumnRef]) -> Result<CorrelationMatrix> {
    if selection.is_empty() {
        return Err(Error::EmptySample("correlation selection"));
    }
    let n = batch.n() as f64;
    let centered: Vec<(Vec<f64>, f64)> = selection
        .iter()
        .map(|c| {
            let v = column(batch, c)?;
            let mean = v.iter().sum::<f64>() / n;
            let dev: Vec<f64> = v.iter().map(|x| x - mean).collect();
            let norm = dev.iter().map(|d| d * d).sum::<f64>().sqrt();
            Ok((dev, norm))
        })
        .collect::<Result<_>>()?;
    let degenerate: Vec<bool> = centered.iter().map(|(_, s)| *s <= 1e-12).collect();
    let k = selection.len();
    let mut values = vec![vec![0.0; k]; k];
    for a in 0..k {
        for b in a..k {
            let r = if degenerate[a] || degenerate[b] {
                0.0
            } else if a == b {
                1.0
            } else {
                let dot: f64 = centered[a].0.iter().zip(&centered[b].0).map(|(x, y)| x * y).sum();
                (dot / (centered[a].1 * centered[b].1)).clamp(-1.0, 1.0)
            };
            values[a][b] = r;
            values[b][a] = r;
        }
    }
    Ok(CorrelationMatrix {
        columns: selection.to_vec(),
        values,
        degenerate,
    })
}

/// Every `(feature, t)` column of both domains at the given hours.
pub fn all_columns(batch: &MixedBatch, hours: &[usize]) -> Vec<ColumnRef> {
    let mut out = Vec::new();
    for &t in hours {
        for f in 0..batch.j() {
            out.push(ColumnRef { domain: Domain::Continuous, feature: f, t });
        }
        for f in 0..batch.k() {
            out.push(ColumnRef { domain: Domain::Discrete, feature: f, t });
        }
    }
    out
}
