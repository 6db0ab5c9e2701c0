use rand_distr::{Distribution, StandardNormal};

use super::{Domain, VaeConfig};
use crate::autograd::{Tape, Var};
use crate::datamodel::{LatentSequence, ModelBundle, ModelDims};
use crate::error::{Error, Result};
use crate::nn::{self, LstmVars};
use crate::rng::{stream, stream_rng, Rng};
use crate::tensor::{Matrix, Tensor3};

pub const LOGVAR_BOUND: f64 = 20.0;

/// Parameter prefix, e.g. `enc_c.lstm`.
pub(crate) fn prefix(net: &str, domain: Domain, layer: &str) -> String {
    format!("{net}_{}.{layer}", domain.tag())
}

/// Fresh encoder, decoder and classifier parameters for both domains.
pub fn init_vae(dims: &ModelDims, cfg: &VaeConfig, seed: u64) -> ModelBundle {
    let mut b = ModelBundle::default();
    let s = cfg.latent_dim;
    let h = cfg.hidden;
    let l = dims.l;
    for domain in Domain::BOTH {
        let width = match domain {
            Domain::Continuous => dims.j,
            Domain::Discrete => dims.k,
        };
        let (enc_stream, dec_stream) = match domain {
            Domain::Continuous => (stream::INIT_ENC_C, stream::INIT_DEC_C),
            Domain::Discrete => (stream::INIT_ENC_D, stream::INIT_DEC_D),
        };
        let mut rng = stream_rng(seed, enc_stream);
        nn::init_lstm(&mut b, &prefix("enc", domain, "lstm"), width + l, h, &mut rng);
        nn::init_linear(&mut b, &prefix("enc", domain, "out"), h, 2 * s, &mut rng);
        let mut rng = stream_rng(seed, dec_stream);
        nn::init_linear(&mut b, &prefix("dec", domain, "in"), s + l, h, &mut rng);
        nn::init_lstm(&mut b, &prefix("dec", domain, "lstm"), h, h, &mut rng);
        nn::init_linear(&mut b, &prefix("dec", domain, "out"), h, width, &mut rng);
        if l > 0 {
            let mut rng = stream_rng(seed, stream::INIT_CLS + if domain == Domain::Continuous { 0 } else { 100 });
            nn::init_linear(&mut b, &format!("cls_{}", domain.tag()), s, l, &mut rng);
        }
    }
    if cfg.share_weights {
        // One draw for each shared layer, copied to both domains.
        let mut rng = stream_rng(seed, stream::INIT_SHARED);
        let mut shared = ModelBundle::default();
        nn::init_linear(&mut shared, "enc_out", h, 2 * s, &mut rng);
        nn::init_linear(&mut shared, "dec_in", s + l, h, &mut rng);
        for (src, net, layer) in [("enc_out", "enc", "out"), ("dec_in", "dec", "in")] {
            for suffix in ["w", "b"] {
                let value = shared.params[&format!("{src}.{suffix}")].clone();
                let a = format!("{}.{suffix}", prefix(net, Domain::Continuous, layer));
                let bname = format!("{}.{suffix}", prefix(net, Domain::Discrete, layer));
                b.params.insert(a.clone(), value.clone());
                b.params.insert(bname.clone(), value);
                b.shared_aliases.push((a, bname));
            }
        }
    }
    let mut dims = dims.clone();
    dims.latent = s;
    dims.hidden = h;
    b.hyper.dims = Some(dims);
    b.hyper.vae = Some(cfg.clone());
    b
}

fn check_labels(bundle: &ModelBundle, labels: Option<&Matrix>, n: usize) -> Result<()> {
    let dims = bundle.dims()?;
    match (dims.conditional(), labels) {
        (true, None) => Err(Error::ConditionalMismatch(
            "conditional model requires labels".into(),
        )),
        (false, Some(_)) => Err(Error::ConditionalMismatch(
            "unconditional model does not accept labels".into(),
        )),
        (true, Some(l)) if l.cols != dims.l || l.rows != n => Err(Error::shape(
            "labels",
            format!("[{n}, {}]", dims.l),
            format!("[{}, {}]", l.rows, l.cols),
        )),
        _ => Ok(()),
    }
}

/// Tape handles of an encoder pass.
#[derive(Clone, Debug)]
pub struct EncodedVars {
    pub mu: Vec<Var>,
    pub logvar: Vec<Var>,
    pub z: Vec<Var>,
}

/// Records the encoder for `domain` on `tape`. `eps` supplies the standard
/// normal draws for the reparameterization, shape `[N,T,S]`.
pub fn encode_on_tape(
    tape: &mut Tape,
    bundle: &ModelBundle,
    domain: Domain,
    x: &Tensor3,
    labels: Option<&Matrix>,
    eps: &Tensor3,
) -> Result<EncodedVars> {
    check_labels(bundle, labels, x.n)?;
    let lstm = LstmVars::load(tape, bundle, &prefix("enc", domain, "lstm"))?;
    let expected = tape.value(lstm.w_in).rows;
    let got = x.d + labels.map_or(0, |l| l.cols);
    if expected != got {
        return Err(Error::shape(
            format!("encoder input ({domain:?})"),
            expected,
            got,
        ));
    }
    let s = bundle.get(&format!("{}.w", prefix("enc", domain, "out")))?.cols / 2;
    if eps.shape() != [x.n, x.t, s] {
        return Err(Error::shape(
            "encoder noise",
            format!("{:?}", [x.n, x.t, s]),
            format!("{:?}", eps.shape()),
        ));
    }
    let inputs = nn::sequence_inputs(tape, x, labels);
    let hs = lstm.run(tape, &inputs);
    let out_prefix = prefix("enc", domain, "out");
    let mut enc = EncodedVars {
        mu: Vec::with_capacity(x.t),
        logvar: Vec::with_capacity(x.t),
        z: Vec::with_capacity(x.t),
    };
    for (t, &h) in hs.iter().enumerate() {
        let stats = nn::linear(tape, bundle, &out_prefix, h)?;
        let mu = tape.slice_cols(stats, 0, s);
        let lv = tape.slice_cols(stats, s, s);
        let lv = tape.clamp(lv, -LOGVAR_BOUND, LOGVAR_BOUND);
        let half = tape.scale(lv, 0.5);
        let std = tape.exp(half);
        let e = tape.constant(eps.step(t));
        let noise = tape.mul(std, e);
        let z = tape.add(mu, noise);
        enc.mu.push(mu);
        enc.logvar.push(lv);
        enc.z.push(z);
    }
    Ok(enc)
}

/// Records the decoder for `domain`; returns per-step probabilities `[N, dim]`.
pub fn decode_on_tape(
    tape: &mut Tape,
    bundle: &ModelBundle,
    domain: Domain,
    z: &[Var],
    labels: Option<&Matrix>,
) -> Result<Vec<Var>> {
    let Some(&first) = z.first() else {
        return Err(Error::EmptySample("decoder input"));
    };
    let n = tape.value(first).rows;
    check_labels(bundle, labels, n)?;
    let in_prefix = prefix("dec", domain, "in");
    let expected = bundle.get(&format!("{in_prefix}.w"))?.rows;
    let got = tape.value(first).cols + labels.map_or(0, |l| l.cols);
    if expected != got {
        return Err(Error::shape(format!("decoder input ({domain:?})"), expected, got));
    }
    let label_var = labels.map(|l| tape.constant(l.clone()));
    let mut inputs = Vec::with_capacity(z.len());
    for &zt in z {
        let x = match label_var {
            Some(lv) => tape.concat_cols(&[zt, lv]),
            None => zt,
        };
        let a = nn::linear(tape, bundle, &in_prefix, x)?;
        inputs.push(tape.tanh(a));
    }
    let lstm = LstmVars::load(tape, bundle, &prefix("dec", domain, "lstm"))?;
    let hs = lstm.run(tape, &inputs);
    let out_prefix = prefix("dec", domain, "out");
    hs.into_iter()
        .map(|h| {
            let y = nn::linear(tape, bundle, &out_prefix, h)?;
            Ok(tape.sigmoid(y))
        })
        .collect()
}

pub(crate) fn standard_normal(n: usize, t: usize, d: usize, rng: &mut Rng) -> Tensor3 {
    Tensor3 {
        n,
        t,
        d,
        data: (0..n * t * d).map(|_| StandardNormal.sample(rng)).collect(),
    }
}

pub(crate) fn eps_stream(domain: Domain) -> u64 {
    match domain {
        Domain::Continuous => stream::EPS_C,
        Domain::Discrete => stream::EPS_D,
    }
}

/// Encodes a domain's sequences, drawing reparameterization noise from `seed`.
pub fn encode(
    x: &Tensor3,
    domain: Domain,
    bundle: &ModelBundle,
    labels: Option<&Matrix>,
    seed: u64,
) -> Result<LatentSequence> {
    let s = bundle.dims()?.latent;
    let mut rng = stream_rng(seed, eps_stream(domain));
    let eps = standard_normal(x.n, x.t, s, &mut rng);
    let mut tape = Tape::new();
    let enc = encode_on_tape(&mut tape, bundle, domain, x, labels, &eps)?;
    let collect = |vars: &[Var]| {
        let steps: Vec<Matrix> = vars.iter().map(|&v| tape.value(v).clone()).collect();
        Tensor3::from_steps(&steps)
    };
    Ok(LatentSequence {
        z: collect(&enc.z)?,
        mu: collect(&enc.mu)?,
        logvar: collect(&enc.logvar)?,
    })
}

/// Decodes latent sequences `[N,T,S]` into per-channel probabilities.
pub fn decode(
    z: &Tensor3,
    domain: Domain,
    bundle: &ModelBundle,
    labels: Option<&Matrix>,
) -> Result<Tensor3> {
    let s = bundle.dims()?.latent;
    if z.d != s {
        return Err(Error::shape("decode latent width", s, z.d));
    }
    let mut tape = Tape::new();
    let zs: Vec<Var> = (0..z.t).map(|t| tape.constant(z.step(t))).collect();
    let out = decode_on_tape(&mut tape, bundle, domain, &zs, labels)?;
    let steps: Vec<Matrix> = out.iter().map(|&v| tape.value(v).clone()).collect();
    Tensor3::from_steps(&steps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> ModelDims {
        ModelDims {
            j: 3,
            k: 2,
            l: 0,
            t: 5,
            latent: 4,
            hidden: 6,
            noise: 4,
            gen_hidden: 6,
            disc_hidden: 6,
        }
    }

    fn cfg() -> VaeConfig {
        VaeConfig {
            latent_dim: 4,
            hidden: 6,
            ..Default::default()
        }
    }

    fn input(n: usize, t: usize, d: usize) -> Tensor3 {
        Tensor3::from_vec(n, t, d, (0..n * t * d).map(|i| ((i as f64) * 0.37).sin().abs()).collect())
            .unwrap()
    }

    #[test]
    fn encode_shape_and_determinism() {
        let b = init_vae(&dims(), &cfg(), 1);
        let x = input(4, 5, 3);
        let a = encode(&x, Domain::Continuous, &b, None, 9).unwrap();
        assert_eq!(a.z.shape(), [4, 5, 4]);
        let again = encode(&x, Domain::Continuous, &b, None, 9).unwrap();
        assert_eq!(a, again);
    }

    #[test]
    fn zeroed_output_layer_gives_pure_noise() {
        let mut b = init_vae(&dims(), &VaeConfig { share_weights: false, ..cfg() }, 1);
        for name in ["enc_c.out.w", "enc_c.out.b"] {
            let m = b.params.get_mut(name).unwrap();
            m.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let x = input(2, 5, 3);
        let lat = encode(&x, Domain::Continuous, &b, None, 3).unwrap();
        let mut rng = stream_rng(3, eps_stream(Domain::Continuous));
        let eps = standard_normal(2, 5, 4, &mut rng);
        assert_eq!(lat.z, eps);
        assert!(lat.mu.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn decode_range_and_zero_params() {
        let mut b = init_vae(&dims(), &cfg(), 2);
        let z = input(4, 5, 4).map_scale(3.0);
        let out = decode(&z, Domain::Continuous, &b, None).unwrap();
        assert_eq!(out.shape(), [4, 5, 3]);
        assert!(out.data.iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(out, decode(&z, Domain::Continuous, &b, None).unwrap());
        for (name, m) in b.params.iter_mut() {
            if name.starts_with("dec_c") {
                m.data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let out = decode(&z, Domain::Continuous, &b, None).unwrap();
        assert!(out.data.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn shape_mismatch_is_named() {
        let b = init_vae(&dims(), &cfg(), 1);
        let x = input(2, 5, 7);
        let err = encode(&x, Domain::Continuous, &b, None, 0).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }

    #[test]
    fn labels_rejected_for_unconditional_model() {
        let b = init_vae(&dims(), &cfg(), 1);
        let x = input(2, 5, 3);
        let y = Matrix::from_vec(2, 2, vec![1., 0., 0., 1.]).unwrap();
        let err = encode(&x, Domain::Continuous, &b, Some(&y), 0).unwrap_err();
        assert!(matches!(err, Error::ConditionalMismatch(_)));
    }

    trait ScaleExt {
        fn map_scale(self, s: f64) -> Self;
    }
    impl ScaleExt for Tensor3 {
        fn map_scale(mut self, s: f64) -> Self {
            self.data.iter_mut().for_each(|v| *v = *v * s - 1.0);
            self
        }
    }
}
