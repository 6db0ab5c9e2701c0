//! Shared domain types: mixed-type batches, latent and noise sequences, and
//! the named-parameter model bundle.

use std::collections::BTreeMap;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::adversarial::GanConfig;
use crate::dualvae::VaeConfig;
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::tensor::{Matrix, Tensor3};

/// Paired continuous `[N,T,J]` and binary `[N,T,K]` sequences with optional
/// one-hot labels `[N,L]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MixedBatch {
    pub cont: Tensor3,
    pub disc: Tensor3,
    pub labels: Option<Matrix>,
    pub feature_names_cont: Vec<String>,
    pub feature_names_disc: Vec<String>,
}

impl MixedBatch {
    /// Builds a batch after checking that all shapes agree.
    pub fn new(
        cont: Tensor3,
        disc: Tensor3,
        labels: Option<Matrix>,
        feature_names_cont: Vec<String>,
        feature_names_disc: Vec<String>,
    ) -> Result<Self> {
        if cont.n != disc.n || cont.t != disc.t {
            return Err(Error::shape(
                "MixedBatch cont vs disc",
                format!("[{}, {}, *]", cont.n, cont.t),
                format!("[{}, {}, *]", disc.n, disc.t),
            ));
        }
        if feature_names_cont.len() != cont.d || feature_names_disc.len() != disc.d {
            return Err(Error::shape(
                "MixedBatch feature names",
                format!("{} / {}", cont.d, disc.d),
                format!("{} / {}", feature_names_cont.len(), feature_names_disc.len()),
            ));
        }
        if let Some(l) = &labels {
            if l.rows != cont.n {
                return Err(Error::shape("MixedBatch labels", cont.n, l.rows));
            }
        }
        Ok(MixedBatch {
            cont,
            disc,
            labels,
            feature_names_cont,
            feature_names_disc,
        })
    }

    /// Default feature names `c0..` / `d0..`.
    pub fn with_default_names(cont: Tensor3, disc: Tensor3, labels: Option<Matrix>) -> Result<Self> {
        let fc = (0..cont.d).map(|j| format!("c{j}")).collect();
        let fd = (0..disc.d).map(|k| format!("d{k}")).collect();
        Self::new(cont, disc, labels, fc, fd)
    }

    pub fn n(&self) -> usize {
        self.cont.n
    }

    pub fn t(&self) -> usize {
        self.cont.t
    }

    pub fn j(&self) -> usize {
        self.cont.d
    }

    pub fn k(&self) -> usize {
        self.disc.d
    }

    /// Label dimension, 0 when unlabeled.
    pub fn l(&self) -> usize {
        self.labels.as_ref().map_or(0, |l| l.cols)
    }

    pub fn select(&self, idx: &[usize]) -> MixedBatch {
        MixedBatch {
            cont: self.cont.select(idx),
            disc: self.disc.select(idx),
            labels: self.labels.as_ref().map(|l| l.select_rows(idx)),
            feature_names_cont: self.feature_names_cont.clone(),
            feature_names_disc: self.feature_names_disc.clone(),
        }
    }

    /// Samples of `self` followed by those of `other`.
    pub fn concat(&self, other: &MixedBatch) -> Result<MixedBatch> {
        let labels = match (&self.labels, &other.labels) {
            (Some(a), Some(b)) if a.cols == b.cols => {
                let mut data = a.data.clone();
                data.extend_from_slice(&b.data);
                Some(Matrix::from_vec(a.rows + b.rows, a.cols, data)?)
            }
            (None, None) => None,
            _ => {
                return Err(Error::ConditionalMismatch(
                    "cannot concatenate labeled and unlabeled batches".into(),
                ))
            }
        };
        MixedBatch::new(
            self.cont.concat(&other.cont)?,
            self.disc.concat(&other.disc)?,
            labels,
            self.feature_names_cont.clone(),
            self.feature_names_disc.clone(),
        )
    }

    /// Class index of each labeled row.
    pub fn label_indices(&self) -> Option<Vec<usize>> {
        self.labels.as_ref().map(|l| {
            (0..l.rows)
                .map(|r| {
                    l.row(r)
                        .iter()
                        .enumerate()
                        .fold((0, f64::NEG_INFINITY), |best, (c, &v)| {
                            if v > best.1 {
                                (c, v)
                            } else {
                                best
                            }
                        })
                        .0
                })
                .collect()
        })
    }
}

/// Checks every [`MixedBatch`] invariant; an empty list means the batch is valid.
pub fn validate_batch(batch: &MixedBatch) -> Vec<String> {
    let mut out = Vec::new();
    let [n, t, j] = batch.cont.shape();
    let k = batch.disc.d;
    for (name, v) in [("N", n), ("T", t), ("J", j), ("K", k)] {
        if v == 0 {
            out.push(format!("dimension {name} is zero"));
        }
    }
    if batch.disc.n != n || batch.disc.t != t {
        out.push(format!(
            "disc shape {:?} disagrees with cont shape {:?}",
            batch.disc.shape(),
            batch.cont.shape()
        ));
        return out;
    }
    for i in 0..n {
        for s in 0..t {
            for c in 0..j {
                let v = batch.cont.get(i, s, c);
                if !v.is_finite() {
                    out.push(format!("cont not finite at ({i},{s},{c})"));
                } else if !(0.0..=1.0).contains(&v) {
                    out.push(format!("cont out of [0,1] at ({i},{s},{c})"));
                }
            }
            for c in 0..k {
                let v = batch.disc.get(i, s, c);
                if v != 0.0 && v != 1.0 {
                    out.push(format!("disc not binary at ({i},{s},{c})"));
                }
            }
        }
    }
    if let Some(labels) = &batch.labels {
        if labels.rows != n {
            out.push(format!("labels has {} rows, expected {n}", labels.rows));
        } else {
            for r in 0..labels.rows {
                let row = labels.row(r);
                let one_hot = row.iter().all(|&v| v == 0.0 || v == 1.0);
                if !one_hot || row.iter().sum::<f64>() != 1.0 {
                    out.push(format!("labels row {r} is not one-hot"));
                }
            }
        }
    }
    out
}

/// Per-step Gaussian posterior codes `[N,T,S]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSequence {
    pub z: Tensor3,
    pub mu: Tensor3,
    pub logvar: Tensor3,
}

impl LatentSequence {
    /// Mean of `z` over time, `[N,S]`.
    pub fn pooled(&self) -> Matrix {
        self.z.mean_over_time()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoisePrior {
    #[default]
    Uniform,
    Gaussian,
}

/// Generator input noise `[N,T,V]`, reproducible from its seed.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSequence {
    pub values: Tensor3,
    pub seed: u64,
}

impl NoiseSequence {
    pub fn sample(n: usize, t: usize, v: usize, seed: u64, prior: NoisePrior) -> Self {
        let mut rng = stream_rng(seed, 0);
        let data = (0..n * t * v)
            .map(|_| match prior {
                NoisePrior::Uniform => rng.random::<f64>(),
                NoisePrior::Gaussian => StandardNormal.sample(&mut rng),
            })
            .collect();
        NoiseSequence {
            values: Tensor3 { n, t, d: v, data },
            seed,
        }
    }
}

/// Architecture dimensions recorded with a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    pub j: usize,
    pub k: usize,
    /// Label width; 0 for unconditional models.
    pub l: usize,
    pub t: usize,
    pub latent: usize,
    pub hidden: usize,
    pub noise: usize,
    pub gen_hidden: usize,
    pub disc_hidden: usize,
}

impl ModelDims {
    pub fn conditional(&self) -> bool {
        self.l > 0
    }
}

/// Training configuration snapshot stored with a bundle.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub dims: Option<ModelDims>,
    pub vae: Option<VaeConfig>,
    pub gan: Option<GanConfig>,
    /// Joint-training iterations completed so far.
    #[serde(default)]
    pub iteration: u64,
    /// Empirical class frequencies of the training labels.
    #[serde(default)]
    pub label_marginal: Option<Vec<f64>>,
    #[serde(default)]
    pub noise_prior: NoisePrior,
    #[serde(default)]
    pub feature_names_cont: Vec<String>,
    #[serde(default)]
    pub feature_names_disc: Vec<String>,
}

/// Named parameter tensors plus the alias pairs that must stay identical.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelBundle {
    pub params: BTreeMap<String, Matrix>,
    pub shared_aliases: Vec<(String, String)>,
    pub hyper: Hyper,
}

impl ModelBundle {
    pub fn get(&self, name: &str) -> Result<&Matrix> {
        self.params
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn dims(&self) -> Result<&ModelDims> {
        self.hyper
            .dims
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("model bundle has no dimensions".into()))
    }

    pub fn has_prefix(&self, prefix: &str) -> bool {
        self.params.keys().any(|k| k.starts_with(prefix))
    }

    /// Canonical name of an alias group (first element of its pair).
    pub fn canonical<'a>(&'a self, name: &'a str) -> &'a str {
        self.shared_aliases
            .iter()
            .find(|(_, b)| b == name)
            .map_or(name, |(a, _)| a.as_str())
    }

    /// Sums gradients within each alias group onto the canonical name.
    pub fn merge_alias_grads(&self, grads: &BTreeMap<String, Matrix>) -> BTreeMap<String, Matrix> {
        let mut merged: BTreeMap<String, Matrix> = BTreeMap::new();
        for (name, g) in grads {
            let canon = self.canonical(name).to_string();
            match merged.get_mut(&canon) {
                Some(existing) => existing.add_assign(g),
                None => {
                    merged.insert(canon, g.clone());
                }
            }
        }
        merged
    }

    /// Copies every canonical tensor onto its aliases.
    pub fn sync_aliases(&mut self) {
        for (a, b) in self.shared_aliases.clone() {
            if let Some(v) = self.params.get(&a).cloned() {
                self.params.insert(b, v);
            }
        }
    }

    /// True when every alias pair is bitwise identical.
    pub fn aliases_consistent(&self) -> bool {
        self.shared_aliases.iter().all(|(a, b)| {
            match (self.params.get(a), self.params.get(b)) {
                (Some(x), Some(y)) => {
                    x.shape() == y.shape()
                        && x.data
                            .iter()
                            .zip(&y.data)
                            .all(|(p, q)| p.to_bits() == q.to_bits())
                }
                _ => false,
            }
        })
    }

    /// Parameters whose names start with any of `prefixes`.
    pub fn names_with_prefixes(&self, prefixes: &[&str]) -> Vec<String> {
        self.params
            .keys()
            .filter(|k| prefixes.iter().any(|p| k.starts_with(p)))
            .cloned()
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> MixedBatch {
        MixedBatch::with_default_names(
            Tensor3::from_vec(1, 4, 3, vec![0.5; 12]).unwrap(),
            Tensor3::from_vec(1, 4, 1, vec![0.0, 1.0, 1.0, 0.0]).unwrap(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn well_formed_batch_has_no_violations() {
        assert!(validate_batch(&tiny()).is_empty());
    }

    #[test]
    fn cont_out_of_range_is_named() {
        let mut b = tiny();
        b.cont.set(0, 3, 2, 1.5);
        assert_eq!(validate_batch(&b), vec!["cont out of [0,1] at (0,3,2)"]);
    }

    #[test]
    fn disc_non_binary_is_named() {
        let mut b = tiny();
        b.disc.set(0, 0, 0, 0.5);
        assert_eq!(validate_batch(&b), vec!["disc not binary at (0,0,0)"]);
    }

    #[test]
    fn labels_must_be_one_hot() {
        let mut b = tiny();
        b.labels = Some(Matrix::from_vec(1, 2, vec![0.5, 0.5]).unwrap());
        assert_eq!(validate_batch(&b), vec!["labels row 0 is not one-hot"]);
    }

    #[test]
    fn noise_is_seeded_and_in_unit_interval() {
        let a = NoiseSequence::sample(3, 5, 4, 11, NoisePrior::Uniform);
        let b = NoiseSequence::sample(3, 5, 4, 11, NoisePrior::Uniform);
        assert_eq!(a, b);
        assert!(a.values.data.iter().all(|v| (0.0..1.0).contains(v)));
        let c = NoiseSequence::sample(3, 5, 4, 12, NoisePrior::Uniform);
        assert_ne!(a, c);
    }
}
