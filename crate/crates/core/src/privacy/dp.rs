use std::collections::BTreeMap;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng, Rng};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpConfig {
    /// Per-example gradient norm bound.
    pub clip_c: f64,
    pub noise_multiplier: f64,
    pub delta: f64,
    /// Expected batch size over dataset size.
    pub sample_rate: f64,
    /// Also privatize dual-VAE pretraining (requires `beta2 == 0`).
    pub pretraining: bool,
}

impl Default for DpConfig {
    fn default() -> Self {
        DpConfig {
            clip_c: 1.0,
            noise_multiplier: 1.0,
            delta: 1e-3,
            sample_rate: 0.01,
            pretraining: false,
        }
    }
}

impl DpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_c > 0.0) {
            return Err(Error::InvalidConfig("clip_c must be > 0".into()));
        }
        if !(self.noise_multiplier >= 0.0) {
            return Err(Error::InvalidConfig("noise_multiplier must be >= 0".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidConfig("delta must lie in (0, 1)".into()));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate <= 1.0) {
            return Err(Error::InvalidConfig("sample_rate must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Rescales `g` in place to norm at most `clip`; returns the new norm.
pub fn clip_gradient(g: &mut [f64], clip: f64) -> f64 {
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > clip {
        let s = clip / norm;
        g.iter_mut().for_each(|v| *v *= s);
        g.iter().map(|v| v * v).sum::<f64>().sqrt()
    } else {
        norm
    }
}

#[derive(Clone, Debug)]
pub struct DpStep {
    pub grad: Vec<f64>,
    /// Largest per-example norm after clipping.
    pub max_clipped_norm: f64,
}

/// Clip each row of `[B, P]`, average, add `N(0, (C·σ/B)²)` noise per coordinate.
pub fn dp_sgd_step_with(per_example: &Matrix, cfg: &DpConfig, rng: &mut Rng) -> DpStep {
    let b = per_example.rows.max(1);
    let mut mean = vec![0.0; per_example.cols];
    let mut max_clipped_norm = 0.0f64;
    let mut row = vec![0.0; per_example.cols];
    for r in 0..per_example.rows {
        row.copy_from_slice(per_example.row(r));
        max_clipped_norm = max_clipped_norm.max(clip_gradient(&mut row, cfg.clip_c));
        for (m, v) in mean.iter_mut().zip(&row) {
            *m += v;
        }
    }
    let std = cfg.clip_c * cfg.noise_multiplier / b as f64;
    let noise = (std > 0.0).then(|| Normal::new(0.0, std).expect("finite std"));
    for m in mean.iter_mut() {
        *m /= b as f64;
        if let Some(noise) = &noise {
            *m += noise.sample(rng);
        }
    }
    DpStep {
        grad: mean,
        max_clipped_norm,
    }
}

/// [`dp_sgd_step_with`] drawing noise from `seed`.
pub fn dp_sgd_step(per_example: &Matrix, cfg: &DpConfig, seed: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, stream::DP_NOISE);
    dp_sgd_step_with(per_example, cfg, &mut rng).grad
}

#[derive(Clone, Debug)]
pub struct PrivateGrads {
    pub grads: BTreeMap<String, Matrix>,
    pub max_clipped_norm: f64,
}

/// DP step over named gradient maps; each example's maps are flattened in name order.
pub fn privatize_named(
    per_example: &[BTreeMap<String, Matrix>],
    cfg: &DpConfig,
    rng: &mut Rng,
) -> PrivateGrads {
    let Some(first) = per_example.first() else {
        return PrivateGrads {
            grads: BTreeMap::new(),
            max_clipped_norm: 0.0,
        };
    };
    let layout: Vec<(String, usize, usize)> = first
        .iter()
        .map(|(k, m)| (k.clone(), m.rows, m.cols))
        .collect();
    let p: usize = layout.iter().map(|(_, r, c)| r * c).sum();
    let mut flat = Matrix::zeros(per_example.len(), p);
    for (i, grads) in per_example.iter().enumerate() {
        let row = flat.row_mut(i);
        let mut off = 0;
        for (name, r, c) in &layout {
            if let Some(g) = grads.get(name) {
                row[off..off + r * c].copy_from_slice(&g.data);
            }
            off += r * c;
        }
    }
    let step = dp_sgd_step_with(&flat, cfg, rng);
    let mut grads = BTreeMap::new();
    let mut off = 0;
    for (name, r, c) in layout {
        let data = step.grad[off..off + r * c].to_vec();
        grads.insert(name, Matrix { rows: r, cols: c, data });
        off += r * c;
    }
    PrivateGrads {
        grads,
        max_clipped_norm: step.max_clipped_norm,
    }
}
