use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::discriminator::{discriminator_logits_on_tape, init_discriminators, uses_cross_domain};
use super::{GanConfig, LossForm};
use crate::autograd::{Tape, Var};
use crate::crn;
use crate::datamodel::{MixedBatch, ModelBundle, NoiseSequence};
use crate::dualvae::{decode_on_tape, Domain};
use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::parallel;
use crate::privacy::{self, DpConfig};
use crate::rng::{derive_seed, stream, stream_rng, Rng};
use crate::tensor::{Matrix, Tensor3};

/// One joint-training iteration.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GanTraceRow {
    pub iteration: u64,
    pub loss_d: f64,
    pub loss_g: f64,
    /// Mean discriminator probability on real sequences, averaged over domains.
    pub d_real: f64,
    pub d_fake: f64,
    /// Largest per-example gradient norm after clipping (0 without DP).
    pub max_clip_norm: f64,
}

#[derive(Clone, Debug)]
pub struct JointOutput {
    pub bundle: ModelBundle,
    pub trace: Vec<GanTraceRow>,
}

const GEN_PREFIXES: [&str; 3] = ["gen.", "gen_c.", "gen_d."];
const DEC_PREFIXES: [&str; 2] = ["dec_c.", "dec_d."];
const DISC_PREFIXES: [&str; 2] = ["disc_c.", "disc_d."];
/// Prefix under which a finished bundle keeps the raw generator weights
/// while the averaged ones take their place.
const RAW_PREFIX: &str = "raw.";

fn keep(grads: BTreeMap<String, Matrix>, prefixes: &[&str]) -> BTreeMap<String, Matrix> {
    grads
        .into_iter()
        .filter(|(k, _)| prefixes.iter().any(|p| k.starts_with(p)))
        .collect()
}

/// Generated decoder outputs, per step and domain.
pub(crate) fn fake_on_tape(
    tape: &mut Tape,
    bundle: &ModelBundle,
    noise_c: &Tensor3,
    noise_d: &Tensor3,
    labels: Option<&Matrix>,
) -> Result<(Vec<Var>, Vec<Var>)> {
    let (zc, zd) = crn::generate_latent_on_tape(tape, bundle, noise_c, noise_d, labels)?;
    let xc = decode_on_tape(tape, bundle, Domain::Continuous, &zc, labels)?;
    let xd = decode_on_tape(tape, bundle, Domain::Discrete, &zd, labels)?;
    Ok((xc, xd))
}

/// Hard 0/1 values in the forward pass, identity gradient to the soft input.
fn straight_through(tape: &mut Tape, steps: &[Var]) -> Vec<Var> {
    steps
        .iter()
        .map(|&p| {
            let shift = tape.value(p).map(|v| if v >= 0.5 { 1.0 - v } else { -v });
            let shift = tape.constant(shift);
            tape.add(p, shift)
        })
        .collect()
}

fn values(tape: &Tape, vars: &[Var]) -> Vec<Matrix> {
    vars.iter().map(|&v| tape.value(v).clone()).collect()
}

fn sample_labels(marginal: &[f64], n: usize, rng: &mut Rng) -> Matrix {
    let mut y = Matrix::zeros(n, marginal.len());
    for i in 0..n {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut class = marginal.len() - 1;
        for (c, p) in marginal.iter().enumerate() {
            acc += p;
            if u < acc {
                class = c;
                break;
            }
        }
        y.set(i, class, 1.0);
    }
    y
}

/// Real and generated sequences for one discriminator update.
struct DiscBatch {
    real_c: Tensor3,
    real_d: Tensor3,
    real_labels: Option<Matrix>,
    fake_c: Vec<Matrix>,
    fake_d: Vec<Matrix>,
    fake_labels: Option<Matrix>,
}

struct DiscLoss {
    loss: f64,
    d_real: f64,
    d_fake: f64,
    grads: BTreeMap<String, Matrix>,
}

fn select_steps(steps: &[Matrix], idx: &[usize]) -> Vec<Matrix> {
    steps.iter().map(|m| m.select_rows(idx)).collect()
}

fn disc_loss(bundle: &ModelBundle, b: &DiscBatch) -> Result<DiscLoss> {
    let mut tape = Tape::new();
    let mut terms = Vec::with_capacity(4);
    let mut d_real = 0.0;
    let mut d_fake = 0.0;
    let cross = uses_cross_domain(bundle);
    let real_steps = |tape: &mut Tape, x: &Tensor3| -> Vec<Var> { (0..x.t).map(|t| tape.constant(x.step(t))).collect() };
    let fake_steps = |tape: &mut Tape, x: &[Matrix]| -> Vec<Var> { x.iter().map(|m| tape.constant(m.clone())).collect() };
    let real = [real_steps(&mut tape, &b.real_c), real_steps(&mut tape, &b.real_d)];
    let fake = [fake_steps(&mut tape, &b.fake_c), fake_steps(&mut tape, &b.fake_d)];
    for (k, domain) in Domain::BOTH.into_iter().enumerate() {
        let (rs, fs) = (&real[k], &fake[k]);
        let (rc, fc) = (cross.then(|| &real[1 - k][..]), cross.then(|| &fake[1 - k][..]));
        let lr = discriminator_logits_on_tape(&mut tape, bundle, domain, rs, rc, b.real_labels.as_ref())?;
        let lf = discriminator_logits_on_tape(&mut tape, bundle, domain, fs, fc, b.fake_labels.as_ref())?;
        d_real += mean_prob(tape.value(lr)) / 2.0;
        d_fake += mean_prob(tape.value(lf)) / 2.0;
        // log D(real) and log(1 − D(fake)) from logits.
        let a = tape.log_sigmoid(lr);
        let neg = tape.scale(lf, -1.0);
        let c = tape.log_sigmoid(neg);
        let a = tape.sum(a);
        let c = tape.sum(c);
        terms.push(tape.scale(a, -1.0 / b.real_c.n as f64));
        terms.push(tape.scale(c, -1.0 / b.fake_c[0].rows as f64));
    }
    let loss = tape.add_n(&terms);
    let grads = tape.backward(loss);
    Ok(DiscLoss {
        loss: tape.scalar(loss),
        d_real,
        d_fake,
        grads: keep(tape.param_grads(&grads), &DISC_PREFIXES),
    })
}

fn mean_prob(logits: &Matrix) -> f64 {
    logits.data.iter().map(|&l| crate::autograd::sigmoid(l)).sum::<f64>() / logits.data.len() as f64
}

/// Stateful joint trainer. [`train_joint`] drives it for the configured
/// number of iterations; tests may call the update steps directly.
pub struct JointTrainer<'a> {
    data: &'a MixedBatch,
    cfg: GanConfig,
    dp: Option<DpConfig>,
    pub bundle: ModelBundle,
    adam_g: Adam,
    adam_d: Adam,
    rng_batch: Rng,
    rng_noise: Rng,
    rng_labels: Rng,
    rng_dp: Rng,
    marginal: Option<Vec<f64>>,
    ema: Option<BTreeMap<String, Matrix>>,
    pub trace: Vec<GanTraceRow>,
}

impl<'a> JointTrainer<'a> {
    /// Adds generator and discriminators to the pretrained decoders. A bundle
    /// that already holds them resumes from its recorded iteration.
    pub fn new(
        data: &'a MixedBatch,
        pretrained: &ModelBundle,
        cfg: &GanConfig,
        dp: Option<&DpConfig>,
    ) -> Result<Self> {
        cfg.validate()?;
        if let Some(dp) = dp {
            dp.validate()?;
        }
        for name in ["dec_c.out.w", "dec_d.out.w"] {
            pretrained.get(name)?;
        }
        let mut bundle = pretrained.clone();
        let mut dims = bundle.dims()?.clone();
        if dims.j != data.j() || dims.k != data.k() {
            return Err(Error::shape(
                "joint training data",
                format!("J={}, K={}", dims.j, dims.k),
                format!("J={}, K={}", data.j(), data.k()),
            ));
        }
        if cfg.conditional != dims.conditional() {
            return Err(Error::ConditionalMismatch(format!(
                "gan conditional={} but pretrained model conditional={}",
                cfg.conditional,
                dims.conditional()
            )));
        }
        let marginal = if cfg.conditional {
            let idx = data.label_indices().ok_or_else(|| {
                Error::ConditionalMismatch("conditional training requires labels".into())
            })?;
            let mut counts = vec![0.0; data.l()];
            for i in idx {
                counts[i] += 1.0;
            }
            let n = data.n() as f64;
            Some(counts.into_iter().map(|c| c / n).collect::<Vec<f64>>())
        } else {
            None
        };
        let mut cfg = cfg.clone();
        if dp.is_some() {
            cfg.minibatch_stats = false;
        }
        if bundle.has_prefix("gen.") {
            if let Some(prev) = &bundle.hyper.gan {
                cfg.minibatch_stats = prev.minibatch_stats;
                cfg.cross_domain = prev.cross_domain;
            }
        }
        let cfg = &cfg;
        bundle.hyper.gan = Some(cfg.clone());
        if !bundle.has_prefix("gen.") {
            dims.noise = cfg.noise_dim;
            dims.gen_hidden = cfg.gen_hidden;
            dims.disc_hidden = cfg.disc_hidden;
            crn::init_generator(&mut bundle, &dims, cfg.seed);
            init_discriminators(&mut bundle, &dims, cfg.seed);
            bundle.hyper.dims = Some(dims);
            bundle.hyper.iteration = 0;
        }
        bundle.hyper.noise_prior = cfg.noise_prior;
        bundle.hyper.label_marginal = marginal.clone();
        let raw = bundle.names_with_prefixes(&[RAW_PREFIX]);
        let ema = (cfg.generator_ema > 0.0).then(|| {
            bundle
                .names_with_prefixes(&GEN_PREFIXES)
                .into_iter()
                .map(|k| {
                    let v = bundle.params[&k].clone();
                    (k, v)
                })
                .collect()
        });
        for k in raw {
            let v = bundle.params.remove(&k).expect("listed");
            bundle.params.insert(k[RAW_PREFIX.len()..].to_string(), v);
        }
        let base = derive_seed(cfg.seed, bundle.hyper.iteration);
        Ok(JointTrainer {
            data,
            cfg: cfg.clone(),
            dp: dp.cloned(),
            bundle,
            adam_g: Adam::with_beta1(cfg.lr_g, cfg.adam_beta1),
            adam_d: Adam::with_beta1(cfg.lr_d, cfg.adam_beta1),
            rng_batch: stream_rng(base, stream::GAN_BATCH),
            rng_noise: stream_rng(base, stream::GAN_NOISE),
            rng_labels: stream_rng(base, stream::GAN_LABELS),
            rng_dp: stream_rng(base, stream::DP_NOISE),
            marginal,
            ema,
            trace: Vec::new(),
        })
    }

    fn noise(&mut self, n: usize) -> (Tensor3, Tensor3) {
        let t = self.data.t();
        let v = self.bundle.dims().map(|d| d.noise).unwrap_or(self.cfg.noise_dim);
        let a = self.rng_noise.random::<u64>();
        let b = self.rng_noise.random::<u64>();
        (
            NoiseSequence::sample(n, t, v, a, self.cfg.noise_prior).values,
            NoiseSequence::sample(n, t, v, b, self.cfg.noise_prior).values,
        )
    }

    fn fake_labels(&mut self, n: usize) -> Option<Matrix> {
        let marginal = self.marginal.clone()?;
        Some(sample_labels(&marginal, n, &mut self.rng_labels))
    }

    fn batch_size(&self) -> usize {
        self.cfg.batch_size.min(self.data.n())
    }

    /// One discriminator update. Returns `(loss_D, d_real, d_fake, max_clip_norm)`.
    pub fn d_step(&mut self) -> Result<(f64, f64, f64, f64)> {
        let b = self.batch_size();
        let idx: Vec<usize> = rand::seq::index::sample(&mut self.rng_batch, self.data.n(), b).into_vec();
        let real = self.data.select(&idx);
        let (nc, nd) = self.noise(b);
        let fake_labels = self.fake_labels(b);
        let mut tape = Tape::new();
        let (xc, xd) = fake_on_tape(&mut tape, &self.bundle, &nc, &nd, fake_labels.as_ref())?;
        let batch = DiscBatch {
            real_c: real.cont.clone(),
            real_d: real.disc.clone(),
            real_labels: if self.cfg.conditional { real.labels.clone() } else { None },
            fake_c: values(&tape, &xc),
            fake_d: {
                let hard = straight_through(&mut tape, &xd);
                values(&tape, &hard)
            },
            fake_labels,
        };
        drop(tape);
        let (loss, d_real, d_fake, grads, clip) = match &self.dp {
            None => {
                let l = disc_loss(&self.bundle, &batch)?;
                (l.loss, l.d_real, l.d_fake, l.grads, 0.0)
            }
            Some(dp) => {
                let work = self.data.t() * self.cfg.disc_hidden * self.cfg.disc_hidden * 16;
                let bundle = &self.bundle;
                let per = parallel::map_indices(b, work, |i| {
                    let one = DiscBatch {
                        real_c: batch.real_c.select(&[i]),
                        real_d: batch.real_d.select(&[i]),
                        real_labels: batch.real_labels.as_ref().map(|l| l.select_rows(&[i])),
                        fake_c: select_steps(&batch.fake_c, &[i]),
                        fake_d: select_steps(&batch.fake_d, &[i]),
                        fake_labels: batch.fake_labels.as_ref().map(|l| l.select_rows(&[i])),
                    };
                    disc_loss(bundle, &one)
                });
                let mut loss = 0.0;
                let mut d_real = 0.0;
                let mut d_fake = 0.0;
                let mut grads = Vec::with_capacity(b);
                for r in per {
                    let r = r?;
                    loss += r.loss / b as f64;
                    d_real += r.d_real / b as f64;
                    d_fake += r.d_fake / b as f64;
                    grads.push(r.grads);
                }
                let private = privacy::privatize_named(&grads, dp, &mut self.rng_dp);
                (loss, d_real, d_fake, private.grads, private.max_clipped_norm)
            }
        };
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                term: "loss_d".into(),
                stage: "joint training",
                step: self.bundle.hyper.iteration as usize,
            });
        }
        self.adam_d.step(&mut self.bundle, &grads);
        Ok((loss, d_real, d_fake, clip))
    }

    /// One generator update (decoders included unless frozen). Returns `loss_G`.
    pub fn g_step(&mut self) -> Result<f64> {
        let b = self.batch_size();
        let (nc, nd) = self.noise(b);
        let labels = self.fake_labels(b);
        let mut tape = Tape::new();
        let (xc, xd) = fake_on_tape(&mut tape, &self.bundle, &nc, &nd, labels.as_ref())?;
        let xd = straight_through(&mut tape, &xd);
        let mut terms = Vec::with_capacity(2);
        let cross = uses_cross_domain(&self.bundle);
        for (domain, xs, other) in [(Domain::Continuous, &xc, &xd), (Domain::Discrete, &xd, &xc)] {
            let ctx = cross.then_some(&other[..]);
            let logits = discriminator_logits_on_tape(&mut tape, &self.bundle, domain, xs, ctx, labels.as_ref())?;
            let term = match self.cfg.loss_form {
                LossForm::NonSaturating => {
                    let l = tape.log_sigmoid(logits);
                    let s = tape.sum(l);
                    tape.scale(s, -1.0 / b as f64)
                }
                LossForm::Saturating => {
                    let neg = tape.scale(logits, -1.0);
                    let l = tape.log_sigmoid(neg);
                    let s = tape.sum(l);
                    tape.scale(s, 1.0 / b as f64)
                }
            };
            terms.push(term);
        }
        let loss = tape.add_n(&terms);
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                term: "loss_g".into(),
                stage: "joint training",
                step: self.bundle.hyper.iteration as usize,
            });
        }
        let grads = tape.backward(loss);
        let all = tape.param_grads(&grads);
        let grads = if self.cfg.freeze_decoders {
            keep(all, &GEN_PREFIXES)
        } else {
            keep(all, &[&GEN_PREFIXES[..], &DEC_PREFIXES[..]].concat())
        };
        self.adam_g.step(&mut self.bundle, &grads);
        Ok(value)
    }

    /// `d_steps_per_g` discriminator updates followed by one generator update.
    pub fn iterate(&mut self) -> Result<&GanTraceRow> {
        let mut row = GanTraceRow {
            iteration: self.bundle.hyper.iteration + 1,
            ..Default::default()
        };
        for _ in 0..self.cfg.d_steps_per_g {
            let (loss, d_real, d_fake, clip) = self.d_step()?;
            row.loss_d = loss;
            row.d_real = d_real;
            row.d_fake = d_fake;
            row.max_clip_norm = row.max_clip_norm.max(clip);
        }
        row.loss_g = self.g_step()?;
        self.bundle.hyper.iteration += 1;
        self.update_ema();
        self.trace.push(row);
        Ok(self.trace.last().expect("pushed"))
    }

    /// Warm-up schedule keeps early averages from anchoring on the
    /// initialization.
    fn update_ema(&mut self) {
        let Some(ema) = self.ema.as_mut() else { return };
        let t = self.bundle.hyper.iteration as f64;
        let decay = self.cfg.generator_ema.min((1.0 + t) / (10.0 + t));
        for (k, avg) in ema.iter_mut() {
            let cur = &self.bundle.params[k];
            for (a, c) in avg.data.iter_mut().zip(&cur.data) {
                *a = decay * *a + (1.0 - decay) * c;
            }
        }
    }

    /// Returns the trained bundle. With a weight average, the averaged
    /// generator is installed and the raw weights are kept for resuming.
    pub fn finish(mut self) -> JointOutput {
        if let Some(ema) = self.ema.take() {
            for (k, avg) in ema {
                let raw = self.bundle.params.insert(k.clone(), avg).expect("generator weight");
                self.bundle.params.insert(format!("{RAW_PREFIX}{k}"), raw);
            }
        }
        JointOutput {
            bundle: self.bundle,
            trace: self.trace,
        }
    }
}

/// Joint adversarial training on top of pretrained decoders.
pub fn train_joint(data: &MixedBatch, pretrained: &ModelBundle, cfg: &GanConfig) -> Result<JointOutput> {
    train_joint_with(data, pretrained, cfg, None)
}

/// [`train_joint`] with optional DP on the discriminator updates.
pub fn train_joint_with(
    data: &MixedBatch,
    pretrained: &ModelBundle,
    cfg: &GanConfig,
    dp: Option<&DpConfig>,
) -> Result<JointOutput> {
    let mut trainer = JointTrainer::new(data, pretrained, cfg, dp)?;
    for _ in 0..cfg.iterations {
        let row = trainer.iterate()?;
        if row.iteration % 50 == 0 {
            log::debug!(
                "gan iteration {}: loss_d {:.4} loss_g {:.4}",
                row.iteration,
                row.loss_d,
                row.loss_g
            );
        }
    }
    Ok(trainer.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_sampling_follows_marginal() {
        let mut rng = stream_rng(1, 0);
        let y = sample_labels(&[0.25, 0.75], 4000, &mut rng);
        let ones = (0..4000).filter(|&i| y.get(i, 1) == 1.0).count() as f64 / 4000.0;
        assert!((ones - 0.75).abs() < 0.03);
        assert!((0..4000).all(|i| y.row(i).iter().sum::<f64>() == 1.0));
    }
}
