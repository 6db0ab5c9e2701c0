//! End-to-end runs on generated cohorts: train, sample, and score.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::adversarial::{sample, train_joint_with, GanConfig, GanTraceRow};
use crate::classifier::ClassifierConfig;
use crate::datamodel::{MixedBatch, ModelBundle, NoisePrior};
use crate::downstream::{run_scenarios, split_protocol, ScenarioRow, TaskWindows};
use crate::dualvae::{pretrain_with, LossTraceRow, VaeConfig};
use crate::error::{Error, Result};
use crate::evalsuite::{dimension_wise_probability, discriminative_score_with, mean_dimwise_gap, mmd, MmdConfig};
use crate::ingest::{make_fixture, FixtureSpec};
use crate::privacy::{membership_attack, privacy_accountant, AttackResult, DpConfig};
use crate::rng::{derive_seed, stream};
use crate::tensor::Matrix;

/// Pretraining and joint-training settings for one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vae: VaeConfig,
    pub gan: GanConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vae: VaeConfig::default(),
            gan: GanConfig::default(),
        }
    }
}

impl ModelConfig {
    /// Settings that converge within a few hundred joint iterations on the
    /// generated cohorts.
    pub fn desk() -> Self {
        ModelConfig {
            vae: VaeConfig::default(),
            gan: GanConfig {
                lr_g: 1e-3,
                lr_d: 1e-3,
                noise_prior: NoisePrior::Gaussian,
                freeze_decoders: true,
                adam_beta1: 0.5,
                generator_ema: 0.99,
                cross_domain: true,
                ..GanConfig::default()
            },
        }
    }

    pub fn conditional(mut self, on: bool) -> Self {
        self.vae.conditional = on;
        self.gan.conditional = on;
        self
    }
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub pretrain_trace: Vec<LossTraceRow>,
    /// Pretrained decoders with a freshly initialized generator.
    pub untrained: ModelBundle,
    pub bundle: ModelBundle,
    pub gan_trace: Vec<GanTraceRow>,
}

/// Pretrains the dual VAE, then runs joint training. Both stages draw from
/// `seed`. With `dp`, discriminator updates are private, and pretraining too
/// when `dp.pretraining` is set.
pub fn fit(data: &MixedBatch, cfg: &ModelConfig, dp: Option<&DpConfig>, seed: u64) -> Result<TrainedModel> {
    let pre = pretrain_with(data, &cfg.vae, seed, dp.filter(|d| d.pretraining))?;
    let gan = GanConfig {
        seed,
        ..cfg.gan.clone()
    };
    let untrained = train_joint_with(
        data,
        &pre.bundle,
        &GanConfig {
            iterations: 0,
            ..gan.clone()
        },
        dp,
    )?
    .bundle;
    let joint = train_joint_with(data, &pre.bundle, &gan, dp)?;
    Ok(TrainedModel {
        pretrain_trace: pre.trace,
        untrained,
        bundle: joint.bundle,
        gan_trace: joint.trace,
    })
}

/// Labels `[M, L]` with `counts[c]` rows of class `c`, in class order.
pub fn class_labels(counts: &[usize]) -> Matrix {
    let m: usize = counts.iter().sum();
    let mut y = Matrix::zeros(m, counts.len());
    let mut r = 0;
    for (c, &k) in counts.iter().enumerate() {
        for _ in 0..k {
            y.set(r, c, 1.0);
            r += 1;
        }
    }
    y
}

/// Draws `m` records, reusing the real label mix when the model is conditional.
pub fn sample_like(bundle: &ModelBundle, real: &MixedBatch, m: usize, seed: u64) -> Result<MixedBatch> {
    let dims = bundle.dims()?;
    let labels = if dims.conditional() {
        let y = real
            .labels
            .as_ref()
            .ok_or_else(|| Error::ConditionalMismatch("conditional model needs labelled reference data".into()))?;
        Some(Matrix::from_vec(
            m,
            y.cols,
            (0..m).flat_map(|i| y.row(i % y.rows).to_vec()).collect(),
        )?)
    } else {
        None
    };
    sample(bundle, m, real.t(), labels.as_ref(), seed)
}

/// Splits a generated cohort of `2n` records into disjoint halves.
fn fixture_halves(spec: &FixtureSpec, n: usize) -> Result<(MixedBatch, MixedBatch)> {
    let fx = make_fixture(&FixtureSpec {
        n_patients: 2 * n,
        ..spec.clone()
    })?;
    let first: Vec<usize> = (0..n).collect();
    let second: Vec<usize> = (n..2 * n).collect();
    Ok((fx.batch.select(&first), fx.batch.select(&second)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmokeOutcome {
    pub seed: u64,
    pub mmd_untrained: f64,
    pub mmd_trained: f64,
    pub dimwise_gap: f64,
    /// Discriminative scores against held-out real data, when requested.
    pub disc_untrained: Option<f64>,
    pub disc_trained: Option<f64>,
}

/// Trains on `spec.n_patients` records and scores samples against as many
/// held-out records drawn from the same generator.
pub fn smoke_run(
    spec: &FixtureSpec,
    cfg: &ModelConfig,
    with_disc_score: bool,
    clf: &ClassifierConfig,
) -> Result<SmokeOutcome> {
    let seed = spec.seed;
    let n = spec.n_patients;
    let (train, holdout) = fixture_halves(spec, n)?;
    let model = fit(&train, cfg, None, seed)?;
    let sample_seed = derive_seed(seed, stream::EXPERIMENT);
    let syn_untrained = sample_like(&model.untrained, &holdout, n, sample_seed)?;
    let syn = sample_like(&model.bundle, &holdout, n, sample_seed)?;
    let mc = MmdConfig::default();
    let real_flat = holdout.cont.flatten();
    let mmd_untrained = mmd(&syn_untrained.cont.flatten(), &real_flat, &mc)?;
    let mmd_trained = mmd(&syn.cont.flatten(), &real_flat, &mc)?;
    let dimwise_gap = mean_dimwise_gap(&dimension_wise_probability(&holdout, &syn)?);
    let (disc_untrained, disc_trained) = if with_disc_score {
        (
            Some(discriminative_score_with(&holdout, &syn_untrained, clf, seed)?),
            Some(discriminative_score_with(&holdout, &syn, clf, seed)?),
        )
    } else {
        (None, None)
    };
    log::info!(
        "seed {seed}: mmd {mmd_untrained:.4} -> {mmd_trained:.4}, dimwise gap {dimwise_gap:.4}"
    );
    Ok(SmokeOutcome {
        seed,
        mmd_untrained,
        mmd_trained,
        dimwise_gap,
        disc_untrained,
        disc_trained,
    })
}

/// Discriminative score between two disjoint halves of one generated cohort.
pub fn real_vs_real_score(spec: &FixtureSpec, clf: &ClassifierConfig) -> Result<f64> {
    let (a, b) = fixture_halves(spec, spec.n_patients)?;
    discriminative_score_with(&a, &b, clf, spec.seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DownstreamSettings {
    pub target_channel: usize,
    pub windows: TaskWindows,
    pub ratios: Vec<f64>,
    pub classifier: ClassifierConfig,
}

impl Default for DownstreamSettings {
    fn default() -> Self {
        DownstreamSettings {
            target_channel: 0,
            windows: TaskWindows::default(),
            ratios: vec![0.0, 0.1, 0.25, 0.5],
            classifier: ClassifierConfig {
                bidirectional: false,
                ..ClassifierConfig::default()
            },
        }
    }
}

/// Trains a generator on the 70% share of a cohort, synthesizes a set the
/// size of the sub-train share, and runs every scenario.
pub fn downstream_run(
    data: &MixedBatch,
    cfg: &ModelConfig,
    settings: &DownstreamSettings,
    seed: u64,
) -> Result<Vec<ScenarioRow>> {
    let mut data = data.clone();
    if !cfg.vae.conditional {
        data.labels = None;
    }
    let split = split_protocol(data.n(), seed)?;
    let a = data.select(&split.idx_a);
    let a_tr = data.select(&split.idx_a_tr);
    let a_te = data.select(&split.idx_a_te);
    let model = fit(&a, cfg, None, seed)?;
    let syn = sample_like(&model.bundle, &a_tr, a_tr.n(), derive_seed(seed, stream::EXPERIMENT))?;
    downstream_scenarios(&a_tr, &a_te, &syn, settings, seed)
}

pub fn downstream_scenarios(
    a_tr: &MixedBatch,
    a_te: &MixedBatch,
    syn: &MixedBatch,
    settings: &DownstreamSettings,
    seed: u64,
) -> Result<Vec<ScenarioRow>> {
    run_scenarios(
        a_tr,
        a_te,
        syn,
        &settings.ratios,
        settings.target_channel,
        &settings.windows,
        &settings.classifier,
        seed,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSettings {
    /// Records available to the attacker, members and non-members alike.
    pub pool: usize,
    /// Members and non-members each contribute this many candidates.
    pub candidates_per_side: usize,
    /// Optimizer steps for pretraining, independent of the training-set size.
    pub pretrain_steps: usize,
}

impl Default for AttackSettings {
    fn default() -> Self {
        AttackSettings {
            pool: 1000,
            candidates_per_side: 100,
            pretrain_steps: 240,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackRow {
    pub seed: u64,
    pub train_fraction: f64,
    pub accuracy: f64,
    pub recall: f64,
    pub threshold: f64,
}

/// Trains on `fraction` of a pool and attacks with balanced candidates.
pub fn attack_run(
    spec: &FixtureSpec,
    cfg: &ModelConfig,
    settings: &AttackSettings,
    fraction: f64,
) -> Result<AttackRow> {
    let pool = make_fixture(&FixtureSpec {
        n_patients: settings.pool,
        ..spec.clone()
    })?
    .batch;
    attack_run_on(&pool, cfg, settings, fraction, spec.seed)
}

/// Interleaves `m` members and `m` outsiders so that the even-indexed and
/// odd-indexed halves each hold both kinds equally.
fn attack_candidates(members: &[usize], outsiders: &[usize], m: usize) -> (Vec<usize>, Vec<bool>) {
    let mut idx = Vec::with_capacity(2 * m);
    let mut membership = Vec::with_capacity(2 * m);
    for i in 0..m {
        let pair = [(members[i], true), (outsiders[i], false)];
        let pair = if i % 2 == 0 { pair } else { [pair[1], pair[0]] };
        for (k, is_member) in pair {
            idx.push(k);
            membership.push(is_member);
        }
    }
    (idx, membership)
}

/// [`attack_run`] against a given record pool; `settings.pool` is ignored.
pub fn attack_run_on(
    pool: &MixedBatch,
    cfg: &ModelConfig,
    settings: &AttackSettings,
    fraction: f64,
    seed: u64,
) -> Result<AttackRow> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidRatio(fraction));
    }
    let n_pool = pool.n();
    let n_train = ((n_pool as f64) * fraction).round() as usize;
    let m = settings.candidates_per_side;
    if n_train < m || n_pool - n_train < m {
        return Err(Error::TooFewSamples(format!(
            "fraction {fraction} leaves fewer than {m} members or non-members"
        )));
    }
    let mut order: Vec<usize> = (0..n_pool).collect();
    order.shuffle(&mut crate::rng::stream_rng(seed, stream::EXPERIMENT + 1));
    let (members, outsiders) = order.split_at(n_train);
    let train = pool.select(members);

    let mut cfg = cfg.clone();
    let batches = n_train.div_ceil(cfg.vae.batch_size.max(1));
    cfg.vae.epochs = settings.pretrain_steps.div_ceil(batches).max(1);
    let model = fit(&train, &cfg, None, seed)?;
    let syn = sample_like(&model.bundle, &train, n_train, derive_seed(seed, stream::EXPERIMENT))?;

    let (cand_idx, membership) = attack_candidates(members, outsiders, m);
    let AttackResult {
        accuracy,
        recall,
        threshold,
        ..
    } = membership_attack(&syn, &pool.select(&cand_idx), &membership)?;
    Ok(AttackRow {
        seed,
        train_fraction: fraction,
        accuracy,
        recall,
        threshold,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpOutcome {
    /// Largest post-clip per-example norm seen at each discriminator step.
    pub max_clip_norms: Vec<f64>,
    pub epsilon: f64,
    pub steps: u64,
}

/// Joint training with private discriminator updates.
pub fn dp_run(data: &MixedBatch, cfg: &ModelConfig, dp: &DpConfig, seed: u64) -> Result<DpOutcome> {
    let epsilon = privacy_accountant(1, dp)?;
    if !epsilon.is_finite() {
        return Err(Error::InfiniteEpsilon);
    }
    let model = fit(data, cfg, Some(dp), seed)?;
    let steps = (cfg.gan.iterations * cfg.gan.d_steps_per_g) as u64;
    Ok(DpOutcome {
        max_clip_norms: model.gan_trace.iter().map(|r| r.max_clip_norm).collect(),
        epsilon: privacy_accountant(steps, dp)?,
        steps,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalOutcome {
    pub cells: usize,
    pub agreeing: usize,
}

impl ConditionalOutcome {
    pub fn agreement(&self) -> f64 {
        if self.cells == 0 {
            0.0
        } else {
            self.agreeing as f64 / self.cells as f64
        }
    }
}

fn class_means(batch: &MixedBatch, class: usize) -> Result<Vec<f64>> {
    let idx: Vec<usize> = batch
        .label_indices()
        .ok_or_else(|| Error::ConditionalMismatch("batch has no labels".into()))?
        .into_iter()
        .enumerate()
        .filter(|&(_, c)| c == class)
        .map(|(i, _)| i)
        .collect();
    if idx.is_empty() {
        return Err(Error::EmptySample("class has no records"));
    }
    let sub = batch.cont.select(&idx);
    let mut out = vec![0.0; sub.t * sub.d];
    for i in 0..sub.n {
        for (o, v) in out.iter_mut().zip(&sub.data[i * sub.t * sub.d..(i + 1) * sub.t * sub.d]) {
            *o += v / sub.n as f64;
        }
    }
    Ok(out)
}

/// Sign agreement of class-1 minus class-0 continuous means between real and
/// synthetic data, over `(j, t)` cells whose real difference exceeds `min_gap`.
pub fn conditional_agreement(real: &MixedBatch, syn: &MixedBatch, min_gap: f64) -> Result<ConditionalOutcome> {
    let (r0, r1) = (class_means(real, 0)?, class_means(real, 1)?);
    let (s0, s1) = (class_means(syn, 0)?, class_means(syn, 1)?);
    let mut out = ConditionalOutcome { cells: 0, agreeing: 0 };
    for c in 0..r0.len() {
        let dr = r1[c] - r0[c];
        if dr.abs() > min_gap {
            out.cells += 1;
            if dr * (s1[c] - s0[c]) > 0.0 {
                out.agreeing += 1;
            }
        }
    }
    Ok(out)
}

/// Trains a conditional model and samples `per_class` records of each class.
pub fn conditional_run(spec: &FixtureSpec, cfg: &ModelConfig, per_class: usize) -> Result<ConditionalOutcome> {
    let data = make_fixture(spec)?.batch;
    let cfg = cfg.clone().conditional(true);
    let model = fit(&data, &cfg, None, spec.seed)?;
    let labels = class_labels(&vec![per_class; data.l()]);
    let syn = sample(&model.bundle, labels.rows, data.t(), Some(&labels), derive_seed(spec.seed, stream::EXPERIMENT))?;
    conditional_agreement(&data, &syn, 0.05)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attack_halves_are_balanced() {
        let (idx, membership) = attack_candidates(&[0, 1, 2, 3], &[10, 11, 12, 13], 4);
        assert_eq!(idx.len(), 8);
        for start in [0, 1] {
            let members = membership.iter().skip(start).step_by(2).filter(|m| **m).count();
            assert_eq!(members, 2);
        }
    }

    #[test]
    fn class_label_layout() {
        let y = class_labels(&[3, 1]);
        assert_eq!(y.rows, 4);
        assert_eq!(y.row(2), &[1.0, 0.0]);
        assert_eq!(y.row(3), &[0.0, 1.0]);
    }

    #[test]
    fn agreement_counts_only_clear_cells() {
        let fx = make_fixture(&FixtureSpec {
            n_patients: 200,
            ..Default::default()
        })
        .unwrap();
        let same = conditional_agreement(&fx.batch, &fx.batch, 0.05).unwrap();
        assert!(same.cells > 0);
        assert_eq!(same.agreeing, same.cells);
    }
}
