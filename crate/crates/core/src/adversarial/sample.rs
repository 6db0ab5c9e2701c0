use super::train::fake_on_tape;
use crate::autograd::Tape;
use crate::datamodel::{MixedBatch, ModelBundle, NoiseSequence};
use crate::error::{Error, Result};
use crate::parallel;
use crate::rng::{derive_seed, stream};
use crate::tensor::{Matrix, Tensor3};

/// Rows generated per tape; bounds memory and sets the unit of parallel work.
const CHUNK: usize = 128;

/// Synthesizes `m` records of length `t`. Discrete probabilities are
/// thresholded at 0.5. Feature names come from the bundle when recorded.
pub fn sample(
    bundle: &ModelBundle,
    m: usize,
    t: usize,
    labels: Option<&Matrix>,
    seed: u64,
) -> Result<MixedBatch> {
    let names = (
        bundle.hyper.feature_names_cont.clone(),
        bundle.hyper.feature_names_disc.clone(),
    );
    sample_with_names(bundle, m, t, labels, seed, names)
}

pub fn sample_with_names(
    bundle: &ModelBundle,
    m: usize,
    t: usize,
    labels: Option<&Matrix>,
    seed: u64,
    names: (Vec<String>, Vec<String>),
) -> Result<MixedBatch> {
    if m == 0 || t == 0 {
        return Err(Error::EmptySample("requested sample size"));
    }
    let dims = bundle.dims()?;
    if t != dims.t {
        return Err(Error::shape("sample horizon", dims.t, t));
    }
    if dims.conditional() != labels.is_some() {
        return Err(Error::ConditionalMismatch(if dims.conditional() {
            "conditional model requires labels".into()
        } else {
            "unconditional model does not accept labels".into()
        }));
    }
    if let Some(l) = labels {
        if l.rows != m || l.cols != dims.l {
            return Err(Error::shape(
                "sample labels",
                format!("[{m}, {}]", dims.l),
                format!("[{}, {}]", l.rows, l.cols),
            ));
        }
    }
    let prior = bundle.hyper.noise_prior;
    let noise_c = NoiseSequence::sample(m, t, dims.noise, derive_seed(seed, stream::SAMPLE_NOISE_C), prior);
    let noise_d = NoiseSequence::sample(m, t, dims.noise, derive_seed(seed, stream::SAMPLE_NOISE_D), prior);
    let starts: Vec<usize> = (0..m).step_by(CHUNK).collect();
    let parts = parallel::map_jobs(starts, |start| -> Result<(Tensor3, Tensor3)> {
        let idx: Vec<usize> = (start..(start + CHUNK).min(m)).collect();
        let y = labels.map(|l| l.select_rows(&idx));
        let mut tape = Tape::new();
        let (xc, xd) = fake_on_tape(
            &mut tape,
            bundle,
            &noise_c.values.select(&idx),
            &noise_d.values.select(&idx),
            y.as_ref(),
        )?;
        let steps = |vars: &[crate::autograd::Var]| -> Vec<Matrix> {
            vars.iter().map(|&v| tape.value(v).clone()).collect()
        };
        Ok((Tensor3::from_steps(&steps(&xc))?, Tensor3::from_steps(&steps(&xd))?))
    });
    let mut cont: Option<Tensor3> = None;
    let mut disc: Option<Tensor3> = None;
    for part in parts {
        let (c, d) = part?;
        cont = Some(match cont {
            None => c,
            Some(acc) => acc.concat(&c)?,
        });
        disc = Some(match disc {
            None => d,
            Some(acc) => acc.concat(&d)?,
        });
    }
    let cont = cont.expect("m >= 1");
    let mut disc = disc.expect("m >= 1");
    disc.data.iter_mut().for_each(|p| *p = if *p >= 0.5 { 1.0 } else { 0.0 });
    let (nc, nd) = names;
    if nc.len() == cont.d && nd.len() == disc.d {
        MixedBatch::new(cont, disc, labels.cloned(), nc, nd)
    } else {
        MixedBatch::with_default_names(cont, disc, labels.cloned())
    }
}
