use serde::{Deserialize, Serialize};

use crate::datamodel::MixedBatch;
use crate::error::{Error, Result};
use crate::parallel;
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub accuracy: f64,
    pub recall: f64,
    /// Candidates at or below this distance are claimed as members.
    pub threshold: f64,
    /// Share of the source data used to train the attacked model. Set to the
    /// member share of the candidates when called directly.
    pub train_fraction: f64,
}

fn flat_records(batch: &MixedBatch) -> Matrix {
    let c = batch.cont.flatten();
    let d = batch.disc.flatten();
    let width = c.cols + d.cols;
    let scale = 1.0 / (width as f64).sqrt();
    let mut out = Matrix::zeros(batch.n(), width);
    for i in 0..batch.n() {
        let row = out.row_mut(i);
        row[..c.cols].copy_from_slice(c.row(i));
        row[c.cols..].copy_from_slice(d.row(i));
        row.iter_mut().for_each(|v| *v *= scale);
    }
    out
}

/// Distance from each candidate to its nearest synthetic record, over
/// flattened records scaled by `1/sqrt(width)`.
pub fn nearest_distances(syn: &MixedBatch, candidates: &MixedBatch) -> Result<Vec<f64>> {
    if syn.n() == 0 {
        return Err(Error::EmptySample("synthetic set"));
    }
    let s = flat_records(syn);
    let c = flat_records(candidates);
    if s.cols != c.cols {
        return Err(Error::shape("attack record width", s.cols, c.cols));
    }
    Ok(parallel::map_indices(c.rows, s.rows * s.cols, |i| {
        let x = c.row(i);
        (0..s.rows)
            .map(|r| {
                s.row(r)
                    .iter()
                    .zip(x)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min)
            .sqrt()
    }))
}

/// Nearest-synthetic-neighbour distance attack.
///
/// Even-indexed candidates calibrate the threshold that maximizes accuracy
/// (smallest threshold on ties); odd-indexed candidates score it.
pub fn membership_attack(
    syn: &MixedBatch,
    candidates: &MixedBatch,
    membership: &[bool],
) -> Result<AttackResult> {
    if membership.len() != candidates.n() {
        return Err(Error::shape("membership vector", candidates.n(), membership.len()));
    }
    if candidates.n() < 2 {
        return Err(Error::TooFewSamples("attack needs at least 2 candidates".into()));
    }
    let dist = nearest_distances(syn, candidates)?;
    let calib: Vec<(f64, bool)> = (0..dist.len())
        .step_by(2)
        .map(|i| (dist[i], membership[i]))
        .collect();
    let mut options: Vec<f64> = calib.iter().map(|(d, _)| *d).collect();
    options.push(f64::NEG_INFINITY);
    options.sort_by(f64::total_cmp);
    options.dedup();
    let accuracy_at = |thr: f64, set: &[(f64, bool)]| {
        set.iter().filter(|(d, m)| (*d <= thr) == *m).count() as f64 / set.len() as f64
    };
    let mut threshold = f64::NEG_INFINITY;
    let mut best = -1.0;
    for &thr in &options {
        let acc = accuracy_at(thr, &calib);
        if acc > best {
            best = acc;
            threshold = thr;
        }
    }
    let eval: Vec<(f64, bool)> = (1..dist.len())
        .step_by(2)
        .map(|i| (dist[i], membership[i]))
        .collect();
    let members = eval.iter().filter(|(_, m)| *m).count();
    let claimed = eval.iter().filter(|(d, m)| *m && *d <= threshold).count();
    Ok(AttackResult {
        accuracy: accuracy_at(threshold, &eval),
        recall: if members == 0 { 0.0 } else { claimed as f64 / members as f64 },
        threshold: if threshold.is_finite() { threshold } else { -1.0 },
        train_fraction: membership.iter().filter(|m| **m).count() as f64 / membership.len() as f64,
    })
}
