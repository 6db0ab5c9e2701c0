use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::losses::{
    contrastive_on_tape, elbo_on_tape, matching_on_tape, mean_pool, semantic_on_tape,
};
use super::model::{decode_on_tape, encode_on_tape, eps_stream, init_vae, standard_normal};
use super::{Domain, VaeConfig};
use crate::autograd::{Tape, Var};
use crate::datamodel::{MixedBatch, ModelBundle, ModelDims};
use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::parallel;
use crate::privacy::{self, DpConfig};
use crate::rng::{stream, stream_rng, Rng};
use crate::tensor::{Matrix, Tensor3};

/// One epoch of averaged loss terms.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTraceRow {
    pub epoch: usize,
    pub l_elbo_c: f64,
    pub l_elbo_d: f64,
    pub l_match: f64,
    pub l_contra: f64,
    pub l_class_c: f64,
    pub l_class_d: f64,
    pub total: f64,
}

impl LossTraceRow {
    fn accumulate(&mut self, other: &LossTraceRow, w: f64) {
        self.l_elbo_c += w * other.l_elbo_c;
        self.l_elbo_d += w * other.l_elbo_d;
        self.l_match += w * other.l_match;
        self.l_contra += w * other.l_contra;
        self.l_class_c += w * other.l_class_c;
        self.l_class_d += w * other.l_class_d;
        self.total += w * other.total;
    }
}

#[derive(Clone, Debug)]
pub struct PretrainOutput {
    pub bundle: ModelBundle,
    pub trace: Vec<LossTraceRow>,
}

struct StepResult {
    row: LossTraceRow,
    grads: BTreeMap<String, Matrix>,
}

fn check_finite(row: &LossTraceRow, step: usize) -> Result<()> {
    let terms = [
        ("l_elbo_c", row.l_elbo_c),
        ("l_elbo_d", row.l_elbo_d),
        ("l_match", row.l_match),
        ("l_contra", row.l_contra),
        ("l_class_c", row.l_class_c),
        ("l_class_d", row.l_class_d),
        ("total", row.total),
    ];
    match terms.iter().find(|(_, v)| !v.is_finite()) {
        Some((name, _)) => Err(Error::NonFiniteLoss {
            term: name.to_string(),
            stage: "pretraining",
            step,
        }),
        None => Ok(()),
    }
}

fn domain_data(batch: &MixedBatch, domain: Domain) -> &Tensor3 {
    match domain {
        Domain::Continuous => &batch.cont,
        Domain::Discrete => &batch.disc,
    }
}

/// Forward and backward pass of the pretraining objective on one batch.
fn vae_step(
    bundle: &ModelBundle,
    cfg: &VaeConfig,
    batch: &MixedBatch,
    eps: &[(Domain, Tensor3)],
) -> Result<StepResult> {
    let labels = if cfg.conditional { batch.labels.as_ref() } else { None };
    let mut tape = Tape::new();
    let mut row = LossTraceRow::default();
    let mut weighted: Vec<Var> = Vec::new();
    let mut pooled: Vec<Var> = Vec::new();
    let mut codes: Vec<Vec<Var>> = Vec::new();
    for (domain, e) in eps {
        let x = domain_data(batch, *domain);
        let enc = encode_on_tape(&mut tape, bundle, *domain, x, labels, e)?;
        let recon = decode_on_tape(&mut tape, bundle, *domain, &enc.z, labels)?;
        let terms = elbo_on_tape(&mut tape, x, &recon, &enc.mu, &enc.logvar, *domain, cfg.beta_kl);
        let v = tape.scalar(terms.total);
        match domain {
            Domain::Continuous => row.l_elbo_c = v,
            Domain::Discrete => row.l_elbo_d = v,
        }
        weighted.push(tape.scale(terms.total, cfg.beta0));
        let p = mean_pool(&mut tape, &enc.z);
        if let Some(y) = labels {
            let tag = domain.tag();
            let w = tape.param(&format!("cls_{tag}.w"), bundle.get(&format!("cls_{tag}.w"))?);
            let b = tape.param(&format!("cls_{tag}.b"), bundle.get(&format!("cls_{tag}.b"))?);
            let class = semantic_on_tape(&mut tape, p, y, w, b);
            let v = tape.scalar(class);
            match domain {
                Domain::Continuous => row.l_class_c = v,
                Domain::Discrete => row.l_class_d = v,
            }
            weighted.push(tape.scale(class, cfg.beta3));
        }
        pooled.push(p);
        codes.push(enc.z);
    }
    if codes.len() == 2 {
        // Both domain objectives contain the cross-domain terms.
        let m = matching_on_tape(&mut tape, &codes[0], &codes[1]);
        row.l_match = tape.scalar(m);
        weighted.push(tape.scale(m, 2.0 * cfg.beta1));
        if cfg.beta2 > 0.0 {
            let c = contrastive_on_tape(&mut tape, pooled[0], pooled[1], cfg.tau)?;
            row.l_contra = tape.scalar(c);
            weighted.push(tape.scale(c, 2.0 * cfg.beta2));
        }
    }
    let total = tape.add_n(&weighted);
    row.total = tape.scalar(total);
    let grads = tape.backward(total);
    Ok(StepResult {
        row,
        grads: tape.param_grads(&grads),
    })
}

fn draw_eps(rngs: &mut [(Domain, Rng)], n: usize, t: usize, s: usize) -> Vec<(Domain, Tensor3)> {
    rngs.iter_mut()
        .map(|(d, rng)| (*d, standard_normal(n, t, s, rng)))
        .collect()
}

fn dims_for(data: &MixedBatch, cfg: &VaeConfig) -> ModelDims {
    ModelDims {
        j: data.j(),
        k: data.k(),
        l: if cfg.conditional { data.l() } else { 0 },
        t: data.t(),
        latent: cfg.latent_dim,
        hidden: cfg.hidden,
        noise: cfg.latent_dim,
        gen_hidden: cfg.hidden,
        disc_hidden: cfg.hidden,
    }
}

fn run(
    data: &MixedBatch,
    cfg: &VaeConfig,
    seed: u64,
    domains: &[Domain],
    dp: Option<&DpConfig>,
) -> Result<PretrainOutput> {
    cfg.validate()?;
    if cfg.conditional && data.labels.is_none() {
        return Err(Error::ConditionalMismatch(
            "conditional pretraining requires labels".into(),
        ));
    }
    if let Some(dp) = dp {
        dp.validate()?;
        if cfg.beta2 > 0.0 {
            return Err(Error::InvalidConfig(
                "per-example clipping needs beta2 = 0 (the contrastive term couples examples)".into(),
            ));
        }
    }
    let mut bundle = init_vae(&dims_for(data, cfg), cfg, seed);
    bundle.hyper.feature_names_cont = data.feature_names_cont.clone();
    bundle.hyper.feature_names_disc = data.feature_names_disc.clone();
    let mut adam = Adam::new(cfg.lr);
    let mut shuffle = stream_rng(seed, stream::SHUFFLE);
    let mut eps_rngs: Vec<(Domain, Rng)> = domains
        .iter()
        .map(|&d| (d, stream_rng(seed, eps_stream(d))))
        .collect();
    let mut dp_rng = stream_rng(seed, stream::DP_NOISE);
    let n = data.n();
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut row = LossTraceRow {
            epoch,
            ..Default::default()
        };
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.select(chunk);
            let eps = draw_eps(&mut eps_rngs, chunk.len(), data.t(), cfg.latent_dim);
            let result = match dp {
                None => vae_step(&bundle, cfg, &batch, &eps)?,
                Some(dp) => private_step(&bundle, cfg, &batch, &eps, dp, &mut dp_rng)?,
            };
            check_finite(&result.row, step)?;
            adam.step(&mut bundle, &result.grads);
            row.accumulate(&result.row, chunk.len() as f64 / n as f64);
            step += 1;
        }
        log::debug!("pretrain epoch {epoch}: total {:.5}", row.total);
        trace.push(row);
    }
    Ok(PretrainOutput { bundle, trace })
}

/// Per-example gradients, clipped and noised before the update.
fn private_step(
    bundle: &ModelBundle,
    cfg: &VaeConfig,
    batch: &MixedBatch,
    eps: &[(Domain, Tensor3)],
    dp: &DpConfig,
    rng: &mut Rng,
) -> Result<StepResult> {
    let n = batch.n();
    let work = batch.t() * cfg.hidden * cfg.hidden * 16;
    let results = parallel::map_indices(n, work, |i| {
        let one = batch.select(&[i]);
        let e: Vec<(Domain, Tensor3)> = eps.iter().map(|(d, t)| (*d, t.select(&[i]))).collect();
        vae_step(bundle, cfg, &one, &e)
    });
    let mut row = LossTraceRow::default();
    let mut per_example = Vec::with_capacity(n);
    for r in results {
        let r = r?;
        row.accumulate(&r.row, 1.0 / n as f64);
        per_example.push(r.grads);
    }
    let private = privacy::privatize_named(&per_example, dp, rng);
    Ok(StepResult {
        row,
        grads: private.grads,
    })
}

/// Pretrains both domains jointly (encoders, decoders and, when conditional,
/// the per-domain classifiers).
pub fn pretrain(data: &MixedBatch, cfg: &VaeConfig, seed: u64) -> Result<PretrainOutput> {
    run(data, cfg, seed, &Domain::BOTH, None)
}

/// [`pretrain`] with optional per-example clipping and Gaussian noise.
pub fn pretrain_with(
    data: &MixedBatch,
    cfg: &VaeConfig,
    seed: u64,
    dp: Option<&DpConfig>,
) -> Result<PretrainOutput> {
    run(data, cfg, seed, &Domain::BOTH, dp)
}

/// Trains only one domain's encoder and decoder on its ELBO. The other
/// domain's parameters are initialized but never updated.
pub fn pretrain_single_domain(
    data: &MixedBatch,
    domain: Domain,
    cfg: &VaeConfig,
    seed: u64,
) -> Result<PretrainOutput> {
    run(data, cfg, seed, &[domain], None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize, t: usize) -> MixedBatch {
        let cont = Tensor3::from_vec(
            n,
            t,
            2,
            (0..n * t * 2).map(|i| 0.5 + 0.4 * ((i as f64) * 0.3).sin()).collect(),
        )
        .unwrap();
        let disc = Tensor3::from_vec(n, t, 1, (0..n * t).map(|i| ((i / 3) % 2) as f64).collect())
            .unwrap();
        MixedBatch::with_default_names(cont, disc, None).unwrap()
    }

    fn small() -> VaeConfig {
        VaeConfig {
            latent_dim: 3,
            hidden: 5,
            epochs: 3,
            batch_size: 4,
            ..Default::default()
        }
    }

    #[test]
    fn aliases_stay_identical() {
        let out = pretrain(&toy(8, 4), &small(), 1).unwrap();
        assert_eq!(out.trace.len(), 3);
        assert!(!out.bundle.shared_aliases.is_empty());
        assert!(out.bundle.aliases_consistent());
    }

    #[test]
    fn dp_rejects_contrastive_term() {
        let dp = DpConfig::default();
        let err = pretrain_with(&toy(8, 4), &small(), 1, Some(&dp)).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
        let cfg = VaeConfig { beta2: 0.0, ..small() };
        let out = pretrain_with(&toy(8, 4), &cfg, 1, Some(&dp)).unwrap();
        assert!(out.bundle.aliases_consistent());
    }

    #[test]
    fn non_finite_loss_names_term() {
        let cfg = VaeConfig { lr: 1e300, ..small() };
        match pretrain(&toy(8, 4), &cfg, 1) {
            Err(Error::NonFiniteLoss { term, .. }) => assert!(!term.is_empty()),
            other => panic!("expected non-finite abort, got {other:?}"),
        }
    }
}
