//! Fidelity metrics comparing real and synthetic mixed-type records.

mod correlation;
mod discriminative;
mod mmd;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierConfig;
use crate::datamodel::MixedBatch;
use crate::dualvae::{self, Domain};
use crate::datamodel::ModelBundle;
use crate::error::{Error, Result};
use crate::rng::derive_seed;

pub use correlation::{all_columns, pearson_correlation_matrix, ColumnRef, CorrelationMatrix};
pub use discriminative::{discriminative_score, discriminative_score_with, mixed_features, MIN_PER_SIDE};
pub use mmd::{median_pairwise_distance, mmd, MmdConfig, MmdEstimator};

/// Bernoulli rate of one discrete channel at one hour, in both datasets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimwiseRow {
    pub feature: String,
    pub t: usize,
    pub p_real: f64,
    pub p_syn: f64,
}

/// Per-(channel, hour) success probabilities of the discrete data.
pub fn dimension_wise_probability(real: &MixedBatch, syn: &MixedBatch) -> Result<Vec<DimwiseRow>> {
    if real.k() != syn.k() || real.t() != syn.t() {
        return Err(Error::shape(
            "dimension-wise probability",
            format!("K={}, T={}", real.k(), real.t()),
            format!("K={}, T={}", syn.k(), syn.t()),
        ));
    }
    let rate = |b: &MixedBatch, t: usize, k: usize| {
        (0..b.n()).map(|i| b.disc.get(i, t, k)).sum::<f64>() / b.n() as f64
    };
    let mut rows = Vec::with_capacity(real.k() * real.t());
    for k in 0..real.k() {
        for t in 0..real.t() {
            rows.push(DimwiseRow {
                feature: real.feature_names_disc[k].clone(),
                t,
                p_real: rate(real, t, k),
                p_syn: rate(syn, t, k),
            });
        }
    }
    Ok(rows)
}

/// Mean `|p_real − p_syn|` over rows.
pub fn mean_dimwise_gap(rows: &[DimwiseRow]) -> f64 {
    rows.iter().map(|r| (r.p_real - r.p_syn).abs()).sum::<f64>() / rows.len().max(1) as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRow {
    pub patient: usize,
    pub domain: Domain,
    pub vector: Vec<f64>,
    pub label: Option<usize>,
}

/// Time-pooled latent code per patient and domain, `2N` rows.
pub fn export_embeddings(model: &ModelBundle, batch: &MixedBatch, seed: u64) -> Result<Vec<EmbeddingRow>> {
    let labels = if model.dims()?.conditional() { batch.labels.as_ref() } else { None };
    let classes = batch.label_indices();
    let mut rows = Vec::with_capacity(2 * batch.n());
    for domain in Domain::BOTH {
        let x = match domain {
            Domain::Continuous => &batch.cont,
            Domain::Discrete => &batch.disc,
        };
        let pooled = dualvae::encode(x, domain, model, labels, seed)?.pooled();
        for i in 0..batch.n() {
            rows.push(EmbeddingRow {
                patient: i,
                domain,
                vector: pooled.row(i).to_vec(),
                label: classes.as_ref().map(|c| c[i]),
            });
        }
    }
    Ok(rows)
}

pub fn write_embeddings_csv(rows: &[EmbeddingRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let width = rows.first().map_or(0, |r| r.vector.len());
    let mut header = vec!["patient".to_string(), "domain".to_string(), "label".to_string()];
    header.extend((0..width).map(|i| format!("z{i}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.patient.to_string(),
            r.domain.tag().to_string(),
            r.label.map_or(String::new(), |l| l.to_string()),
        ];
        rec.extend(r.vector.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub mmd: MmdConfig,
    /// Hours whose columns enter the correlation matrices.
    pub hours: Vec<usize>,
    pub classifier: ClassifierConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            mmd: MmdConfig::default(),
            hours: vec![0],
            classifier: ClassifierConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mmd: f64,
    pub dimwise: Vec<DimwiseRow>,
    pub dimwise_mean_abs_gap: f64,
    pub disc_score: f64,
    pub corr_real: CorrelationMatrix,
    pub corr_syn: CorrelationMatrix,
}

/// Every metric of the suite. MMD runs on flattened continuous data; the
/// discriminative score uses as many synthetic records as real ones.
pub fn evaluate(real: &MixedBatch, syn: &MixedBatch, cfg: &EvalConfig, seed: u64) -> Result<EvalReport> {
    let mmd = mmd(&real.cont.flatten(), &syn.cont.flatten(), &cfg.mmd)?;
    let dimwise = dimension_wise_probability(real, syn)?;
    let m = real.n().min(syn.n());
    let idx: Vec<usize> = (0..m).collect();
    let disc_score = discriminative_score_with(
        &real.select(&idx),
        &syn.select(&idx),
        &cfg.classifier,
        derive_seed(seed, 1),
    )?;
    let hours: Vec<usize> = cfg.hours.iter().copied().filter(|&h| h < real.t()).collect();
    let columns = all_columns(real, &hours);
    Ok(EvalReport {
        mmd,
        dimwise_mean_abs_gap: mean_dimwise_gap(&dimwise),
        dimwise,
        disc_score,
        corr_real: pearson_correlation_matrix(real, &columns)?,
        corr_syn: pearson_correlation_matrix(syn, &columns)?,
    })
}

pub fn write_dimwise_csv(rows: &[DimwiseRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_correlation_csv(m: &CorrelationMatrix, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let name = |c: &ColumnRef| format!("{}{}@{}", c.domain.tag(), c.feature, c.t);
    let mut header = vec![String::from("column")];
    header.extend(m.columns.iter().map(name));
    w.write_record(&header)?;
    for (c, row) in m.columns.iter().zip(&m.values) {
        let mut rec = vec![name(c)];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor3;

    fn batch(disc: Vec<f64>, n: usize) -> MixedBatch {
        let cont = Tensor3::from_vec(n, 1, 1, (0..n).map(|i| i as f64 / n as f64).collect()).unwrap();
        let disc = Tensor3::from_vec(n, 1, 1, disc).unwrap();
        MixedBatch::with_default_names(cont, disc, None).unwrap()
    }

    #[test]
    fn dimwise_rates() {
        let ones = batch(vec![1.0; 4], 4);
        let alt = batch(vec![1.0, 0.0, 1.0, 0.0], 4);
        let rows = dimension_wise_probability(&ones, &alt).unwrap();
        assert_eq!(rows[0].p_real, 1.0);
        assert_eq!(rows[0].p_syn, 0.5);
        let same = dimension_wise_probability(&alt, &alt).unwrap();
        assert!(same.iter().all(|r| r.p_real == r.p_syn));
    }

    #[test]
    fn correlation_cases() {
        let cont = Tensor3::from_vec(4, 1, 1, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let disc = Tensor3::from_vec(4, 1, 2, vec![0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let b = MixedBatch::with_default_names(cont, disc, None).unwrap();
        let cols = all_columns(&b, &[0]);
        let m = pearson_correlation_matrix(&b, &cols).unwrap();
        assert_eq!(m.values[0][0], 1.0);
        assert!((m.values[0][1] + 1.0).abs() < 1e-12);
        assert_eq!(m.values[0][2], 0.0);
        assert_eq!(m.degenerate, vec![false, false, true]);
    }
}
