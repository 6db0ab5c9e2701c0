use super::LossForm;
use crate::autograd::{self, Tape, Var};
use crate::datamodel::{ModelBundle, ModelDims};
use crate::dualvae::Domain;
use crate::error::{Error, Result};
use crate::nn::{self, LstmVars};
use crate::rng::{stream, stream_rng};
use crate::tensor::{Matrix, Tensor3};

/// Probability clamp applied before taking logs.
pub const PROB_EPS: f64 = 1e-7;

pub(crate) fn disc_prefix(domain: Domain) -> String {
    format!("disc_{}", domain.tag())
}

fn uses_batch_stats(bundle: &ModelBundle) -> bool {
    bundle.hyper.gan.as_ref().is_some_and(|g| g.minibatch_stats)
}

/// Whether the discriminators read the other domain as context.
pub fn uses_cross_domain(bundle: &ModelBundle) -> bool {
    bundle.hyper.gan.as_ref().is_some_and(|g| g.cross_domain)
}

/// Adds one many-to-one LSTM discriminator per domain. Reads the
/// `minibatch_stats` and `cross_domain` flags from `bundle.hyper.gan`.
pub fn init_discriminators(bundle: &mut ModelBundle, dims: &ModelDims, seed: u64) {
    let stats = uses_batch_stats(bundle);
    let cross = uses_cross_domain(bundle);
    for domain in Domain::BOTH {
        let (width, other, s) = match domain {
            Domain::Continuous => (dims.j, dims.k, stream::INIT_DISC_C),
            Domain::Discrete => (dims.k, dims.j, stream::INIT_DISC_D),
        };
        let mut rng = stream_rng(seed, s);
        let p = disc_prefix(domain);
        let input = width + dims.l + if stats { width + 1 } else { 0 } + if cross { other } else { 0 };
        nn::init_lstm(bundle, &format!("{p}.lstm"), input, dims.disc_hidden, &mut rng);
        nn::init_linear(bundle, &format!("{p}.out"), dims.disc_hidden, 1, &mut rng);
    }
}

/// Records the discriminator over per-step inputs `[N, dim]`; returns logits `[N, 1]`.
/// `context` holds the other domain's steps and is required exactly when
/// the model was built with `cross_domain`.
pub fn discriminator_logits_on_tape(
    tape: &mut Tape,
    bundle: &ModelBundle,
    domain: Domain,
    steps: &[Var],
    context: Option<&[Var]>,
    labels: Option<&Matrix>,
) -> Result<Var> {
    let Some(&first) = steps.first() else {
        return Err(Error::EmptySample("discriminator input"));
    };
    let dims = bundle.dims()?;
    let n = tape.value(first).rows;
    match (dims.conditional(), labels) {
        (true, None) => {
            return Err(Error::ConditionalMismatch(
                "conditional discriminator requires labels".into(),
            ))
        }
        (false, Some(_)) => {
            return Err(Error::ConditionalMismatch(
                "unconditional discriminator does not accept labels".into(),
            ))
        }
        (true, Some(l)) if l.rows != n || l.cols != dims.l => {
            return Err(Error::shape(
                "discriminator labels",
                format!("[{n}, {}]", dims.l),
                format!("[{}, {}]", l.rows, l.cols),
            ))
        }
        _ => {}
    }
    let p = disc_prefix(domain);
    let lstm = LstmVars::load(tape, bundle, &format!("{p}.lstm"))?;
    let stats = uses_batch_stats(bundle);
    let context = match (uses_cross_domain(bundle), context) {
        (true, Some(c)) if c.len() == steps.len() => Some(c),
        (true, Some(c)) => return Err(Error::shape("discriminator context length", steps.len(), c.len())),
        (true, None) => return Err(Error::InvalidConfig("cross-domain discriminator requires context".into())),
        (false, Some(_)) => return Err(Error::InvalidConfig("discriminator does not accept context".into())),
        (false, None) => None,
    };
    let width = tape.value(first).cols;
    let want = tape.value(lstm.w_in).rows;
    let got = width
        + labels.map_or(0, |l| l.cols)
        + if stats { width + 1 } else { 0 }
        + context.map_or(0, |c| tape.value(c[0]).cols);
    if want != got {
        return Err(Error::shape(format!("discriminator input ({domain:?})"), want, got));
    }
    let lv = labels.map(|l| tape.constant(l.clone()));
    let inputs: Vec<Var> = steps
        .iter()
        .enumerate()
        .map(|(t, &x)| {
            let mut parts = vec![x];
            parts.extend(context.map(|c| c[t]));
            parts.extend(lv);
            if stats {
                parts.push(batch_stats(tape, x));
            }
            if parts.len() == 1 { x } else { tape.concat_cols(&parts) }
        })
        .collect();
    let hs = lstm.run(tape, &inputs);
    let last = *hs.last().expect("non-empty sequence");
    nn::linear(tape, bundle, &format!("{p}.out"), last)
}

/// Across-row mean of each channel followed by the channel-averaged
/// across-row standard deviation, broadcast to every row: `[N, d + 1]`.
fn batch_stats(tape: &mut Tape, x: Var) -> Var {
    let (n, d) = tape.value(x).shape();
    let avg = tape.constant(Matrix::filled(1, n, 1.0 / n as f64));
    let ones = tape.constant(Matrix::filled(n, 1, 1.0));
    let mean = tape.matmul(avg, x);
    let mean = tape.matmul(ones, mean);
    let diff = tape.sub(x, mean);
    let sq = tape.square(diff);
    let var = tape.matmul(avg, sq);
    let eps = tape.constant(Matrix::filled(1, d, 1e-8));
    let var = tape.add(var, eps);
    let log_var = tape.log_clamp(var, f64::MIN_POSITIVE, f64::MAX);
    let half = tape.scale(log_var, 0.5);
    let sd = tape.exp(half);
    let over_d = tape.constant(Matrix::filled(d, 1, 1.0 / d as f64));
    let s = tape.matmul(sd, over_d);
    let spread = tape.matmul(ones, s);
    tape.concat_cols(&[mean, spread])
}

/// Probability that each sequence is real, `[N]`. `context` is the other
/// domain's batch for cross-domain models.
pub fn discriminate(
    x: &Tensor3,
    domain: Domain,
    bundle: &ModelBundle,
    context: Option<&Tensor3>,
    labels: Option<&Matrix>,
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let steps: Vec<Var> = (0..x.t).map(|t| tape.constant(x.step(t))).collect();
    let ctx: Option<Vec<Var>> = context.map(|c| (0..c.t).map(|t| tape.constant(c.step(t))).collect());
    let logits = discriminator_logits_on_tape(&mut tape, bundle, domain, &steps, ctx.as_deref(), labels)?;
    Ok(tape.value(logits).data.iter().map(|&l| autograd::sigmoid(l)).collect())
}

fn mean_log(p: &[f64], complement: bool) -> f64 {
    let s: f64 = p
        .iter()
        .map(|&v| {
            let v = v.clamp(PROB_EPS, 1.0 - PROB_EPS);
            if complement { (1.0 - v).ln() } else { v.ln() }
        })
        .sum();
    s / p.len().max(1) as f64
}

/// `(loss_D, loss_G)` from discriminator probabilities.
pub fn gan_losses(
    d_real_c: &[f64],
    d_fake_c: &[f64],
    d_real_d: &[f64],
    d_fake_d: &[f64],
    form: LossForm,
) -> (f64, f64) {
    let loss_d = -(mean_log(d_real_c, false)
        + mean_log(d_real_d, false)
        + mean_log(d_fake_c, true)
        + mean_log(d_fake_d, true));
    let loss_g = match form {
        LossForm::Saturating => mean_log(d_fake_c, true) + mean_log(d_fake_d, true),
        LossForm::NonSaturating => -(mean_log(d_fake_c, false) + mean_log(d_fake_d, false)),
    };
    (loss_d, loss_g)
}

/// [`gan_losses`] recorded on a tape over probability columns `[N, 1]`.
pub fn gan_losses_on_tape(
    tape: &mut Tape,
    d_real_c: Var,
    d_fake_c: Var,
    d_real_d: Var,
    d_fake_d: Var,
    form: LossForm,
) -> (Var, Var) {
    let hi = 1.0 - PROB_EPS;
    let mean_log = |tape: &mut Tape, p: Var, complement: bool| {
        let n = tape.value(p).rows as f64;
        let arg = if complement {
            let neg = tape.scale(p, -1.0);
            let one = tape.constant(Matrix::filled(tape.value(p).rows, 1, 1.0));
            tape.add(one, neg)
        } else {
            p
        };
        let l = tape.log_clamp(arg, PROB_EPS, hi);
        let s = tape.sum(l);
        tape.scale(s, 1.0 / n)
    };
    let a = mean_log(tape, d_real_c, false);
    let b = mean_log(tape, d_real_d, false);
    let c = mean_log(tape, d_fake_c, true);
    let d = mean_log(tape, d_fake_d, true);
    let sum = tape.add_n(&[a, b, c, d]);
    let loss_d = tape.scale(sum, -1.0);
    let loss_g = match form {
        LossForm::Saturating => tape.add(c, d),
        LossForm::NonSaturating => {
            let e = mean_log(tape, d_fake_c, false);
            let f = mean_log(tape, d_fake_d, false);
            let s = tape.add(e, f);
            tape.scale(s, -1.0)
        }
    };
    (loss_d, loss_g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle() -> ModelBundle {
        let dims = ModelDims {
            j: 3,
            k: 2,
            l: 0,
            t: 4,
            latent: 2,
            hidden: 3,
            noise: 2,
            gen_hidden: 3,
            disc_hidden: 5,
        };
        let mut b = ModelBundle::default();
        init_discriminators(&mut b, &dims, 4);
        b.hyper.dims = Some(dims);
        b
    }

    fn x(n: usize) -> Tensor3 {
        Tensor3::from_vec(n, 4, 3, (0..n * 12).map(|i| ((i * 5) % 7) as f64 / 7.0).collect()).unwrap()
    }

    #[test]
    fn fixed_point_is_four_ln_two() {
        let half = [0.5; 3];
        let (d, g) = gan_losses(&half, &half, &half, &half, LossForm::NonSaturating);
        assert!((d - 4.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((g - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn confident_fake_drives_generator_loss_to_zero() {
        let one = [1.0; 2];
        let (_, g) = gan_losses(&one, &one, &one, &one, LossForm::NonSaturating);
        assert!(g >= 0.0 && g < 1e-6);
    }

    #[test]
    fn probabilities_in_range_and_zeroed_head() {
        let mut b = bundle();
        let p = discriminate(&x(5), Domain::Continuous, &b, None, None).unwrap();
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
        for name in ["disc_c.out.w", "disc_c.out.b"] {
            b.params.get_mut(name).unwrap().data.iter_mut().for_each(|v| *v = 0.0);
        }
        let p = discriminate(&x(5), Domain::Continuous, &b, None, None).unwrap();
        assert!(p.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn batch_equivariance() {
        let b = bundle();
        let data = x(4);
        let p = discriminate(&data, Domain::Continuous, &b, None, None).unwrap();
        let perm = [2, 0, 3, 1];
        let q = discriminate(&data.select(&perm), Domain::Continuous, &b, None, None).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(q[k], p[i]);
        }
    }

    #[test]
    fn wrong_width_is_a_shape_error() {
        let err = discriminate(&x(2), Domain::Discrete, &bundle(), None, None).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }
}
