use crate::classifier::{stratified_split, ClassifierConfig, SequenceClassifier};
use crate::datamodel::MixedBatch;
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::tensor::Tensor3;

/// Smallest number of records accepted on each side.
pub const MIN_PER_SIDE: usize = 20;

/// Concatenates continuous and discrete channels per step, `[N, T, J+K]`.
pub fn mixed_features(batch: &MixedBatch) -> Tensor3 {
    let (n, t, j, k) = (batch.n(), batch.t(), batch.j(), batch.k());
    let mut out = Tensor3::zeros(n, t, j + k);
    for i in 0..n {
        for s in 0..t {
            for c in 0..j {
                out.set(i, s, c, batch.cont.get(i, s, c));
            }
            for c in 0..k {
                out.set(i, s, j + c, batch.disc.get(i, s, c));
            }
        }
    }
    out
}

/// Held-out accuracy of a recurrent classifier separating real (1) from
/// synthetic (0) records. 0.5 means indistinguishable.
pub fn discriminative_score(real_test: &MixedBatch, syn: &MixedBatch, seed: u64) -> Result<f64> {
    discriminative_score_with(real_test, syn, &ClassifierConfig::default(), seed)
}

pub fn discriminative_score_with(
    real_test: &MixedBatch,
    syn: &MixedBatch,
    cfg: &ClassifierConfig,
    seed: u64,
) -> Result<f64> {
    if real_test.n() < MIN_PER_SIDE || syn.n() < MIN_PER_SIDE {
        return Err(Error::TooFewSamples(format!(
            "discriminative score needs {MIN_PER_SIDE} records per side, got {} real and {} synthetic",
            real_test.n(),
            syn.n()
        )));
    }
    if real_test.n() != syn.n() {
        return Err(Error::shape("synthetic sample size", real_test.n(), syn.n()));
    }
    let x = mixed_features(real_test).concat(&mixed_features(syn))?;
    let y: Vec<usize> = (0..x.n).map(|i| usize::from(i < real_test.n())).collect();
    let (train_all, test) = stratified_split(&y, 0.2, seed, stream::SPLIT);
    let train_labels: Vec<usize> = train_all.iter().map(|&i| y[i]).collect();
    let (fit_pos, val_pos) = stratified_split(&train_labels, 0.2, seed, stream::SPLIT + 1);
    let pick = |idx: &[usize]| -> (Tensor3, Vec<usize>) { (x.select(idx), idx.iter().map(|&i| y[i]).collect()) };
    let fit_idx: Vec<usize> = fit_pos.iter().map(|&p| train_all[p]).collect();
    let val_idx: Vec<usize> = val_pos.iter().map(|&p| train_all[p]).collect();
    let (xf, yf) = pick(&fit_idx);
    let (xv, yv) = pick(&val_idx);
    let (xt, yt) = pick(&test);
    let model = SequenceClassifier::fit(&xf, &yf, 2, (&xv, &yv), cfg, seed)?;
    let pred = model.predict(&xt)?;
    let correct = pred.iter().zip(&yt).filter(|(p, t)| p == t).count();
    Ok(correct as f64 / yt.len() as f64)
}
