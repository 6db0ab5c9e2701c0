//! Many-to-one recurrent softmax classifier with early stopping, used by the
//! discriminative score and the downstream prediction task.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::datamodel::ModelBundle;
use crate::error::{Error, Result};
use crate::nn::{self, LstmVars};
use crate::optim::Adam;
use crate::parallel;
use crate::rng::{stream, stream_rng};
use crate::tensor::{Matrix, Tensor3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub lr: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Add a reversed-time LSTM and concatenate both final states.
    pub bidirectional: bool,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden: 16,
            lr: 5e-3,
            max_epochs: 100,
            batch_size: 64,
            patience: 10,
            bidirectional: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SequenceClassifier {
    params: ModelBundle,
    classes: usize,
    bidirectional: bool,
    /// Epochs actually run.
    pub epochs: usize,
}

fn logits_on_tape(
    tape: &mut Tape,
    params: &ModelBundle,
    x: &Tensor3,
    bidirectional: bool,
) -> Result<Var> {
    let steps = nn::sequence_inputs(tape, x, None);
    let fwd = LstmVars::load(tape, params, "fwd")?;
    let hf = *fwd.run(tape, &steps).last().ok_or(Error::EmptySample("sequence"))?;
    let last = if bidirectional {
        let bwd = LstmVars::load(tape, params, "bwd")?;
        let rev: Vec<Var> = steps.iter().rev().copied().collect();
        let hb = *bwd.run(tape, &rev).last().expect("non-empty");
        tape.concat_cols(&[hf, hb])
    } else {
        hf
    };
    nn::linear(tape, params, "head", last)
}

fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    out
}

const PREDICT_CHUNK: usize = 256;

impl SequenceClassifier {
    /// Trains on `(x, y)` and keeps the parameters with the lowest loss on
    /// `(x_val, y_val)`.
    pub fn fit(
        x: &Tensor3,
        y: &[usize],
        classes: usize,
        val: (&Tensor3, &[usize]),
        cfg: &ClassifierConfig,
        seed: u64,
    ) -> Result<Self> {
        if x.n == 0 || x.n != y.len() || val.0.n != val.1.len() {
            return Err(Error::TooFewSamples("classifier needs labelled training data".into()));
        }
        if let Some(&bad) = y.iter().chain(val.1).find(|&&c| c >= classes) {
            return Err(Error::InvalidConfig(format!("class {bad} out of range")));
        }
        let mut rng = stream_rng(seed, stream::CLASSIFIER);
        let mut params = ModelBundle::default();
        nn::init_lstm(&mut params, "fwd", x.d, cfg.hidden, &mut rng);
        let width = if cfg.bidirectional {
            nn::init_lstm(&mut params, "bwd", x.d, cfg.hidden, &mut rng);
            2 * cfg.hidden
        } else {
            cfg.hidden
        };
        nn::init_linear(&mut params, "head", width, classes, &mut rng);
        let mut model = SequenceClassifier {
            params,
            classes,
            bidirectional: cfg.bidirectional,
            epochs: 0,
        };
        let mut adam = Adam::new(cfg.lr);
        let mut best = (f64::INFINITY, model.params.clone());
        let mut since_best = 0;
        let mut order: Vec<usize> = (0..x.n).collect();
        for epoch in 1..=cfg.max_epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.batch_size.max(1)) {
                let xb = x.select(chunk);
                let yb: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
                let mut tape = Tape::new();
                let logits = logits_on_tape(&mut tape, &model.params, &xb, model.bidirectional)?;
                let loss = tape.softmax_xent(logits, &yb, false);
                if !tape.scalar(loss).is_finite() {
                    return Err(Error::NonFiniteLoss {
                        term: "cross_entropy".into(),
                        stage: "classifier training",
                        step: epoch,
                    });
                }
                let grads = tape.backward(loss);
                adam.step(&mut model.params, &tape.param_grads(&grads));
            }
            model.epochs = epoch;
            if val.0.n == 0 {
                continue;
            }
            let val_loss = model.loss(val.0, val.1)?;
            if val_loss < best.0 {
                best = (val_loss, model.params.clone());
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    break;
                }
            }
        }
        if val.0.n > 0 {
            model.params = best.1;
        }
        Ok(model)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Class probabilities `[N, classes]`.
    pub fn predict_proba(&self, x: &Tensor3) -> Result<Matrix> {
        let starts: Vec<usize> = (0..x.n).step_by(PREDICT_CHUNK).collect();
        let parts = parallel::map_jobs(starts, |s| -> Result<Matrix> {
            let idx: Vec<usize> = (s..(s + PREDICT_CHUNK).min(x.n)).collect();
            let mut tape = Tape::new();
            let logits = logits_on_tape(&mut tape, &self.params, &x.select(&idx), self.bidirectional)?;
            Ok(softmax_rows(tape.value(logits)))
        });
        let mut out = Matrix::zeros(x.n, self.classes);
        let mut row = 0;
        for part in parts {
            let part = part?;
            for r in 0..part.rows {
                out.row_mut(row).copy_from_slice(part.row(r));
                row += 1;
            }
        }
        Ok(out)
    }

    /// Mean cross-entropy on `(x, y)`.
    pub fn loss(&self, x: &Tensor3, y: &[usize]) -> Result<f64> {
        let p = self.predict_proba(x)?;
        Ok(y
            .iter()
            .enumerate()
            .map(|(i, &c)| -p.get(i, c).max(1e-300).ln())
            .sum::<f64>()
            / y.len().max(1) as f64)
    }

    pub fn predict(&self, x: &Tensor3) -> Result<Vec<usize>> {
        let p = self.predict_proba(x)?;
        Ok((0..p.rows)
            .map(|r| {
                p.row(r)
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |acc, (c, &v)| if v > acc.1 { (c, v) } else { acc })
                    .0
            })
            .collect())
    }
}

/// Stratified split of indices `0..labels.len()`: a `fraction` share of each
/// class goes to the second set.
pub fn stratified_split(labels: &[usize], fraction: f64, seed: u64, stream_id: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = stream_rng(seed, stream_id);
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut first = Vec::new();
    let mut second = Vec::new();
    for c in 0..classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng);
        let k = (idx.len() as f64 * fraction).round() as usize;
        second.extend_from_slice(&idx[..k]);
        first.extend_from_slice(&idx[k..]);
    }
    first.sort_unstable();
    second.sort_unstable();
    (first, second)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_sequences_are_learned() {
        let n = 60;
        let mut data = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let c = i % 2;
            y.push(c);
            for t in 0..5 {
                data.push(if c == 1 { 0.9 } else { 0.1 } + 0.01 * t as f64);
            }
        }
        let x = Tensor3::from_vec(n, 5, 1, data).unwrap();
        let cfg = ClassifierConfig {
            max_epochs: 40,
            ..Default::default()
        };
        let m = SequenceClassifier::fit(&x, &y, 2, (&x, &y), &cfg, 3).unwrap();
        let pred = m.predict(&x).unwrap();
        assert_eq!(pred, y);
    }

    #[test]
    fn stratified_split_preserves_classes() {
        let labels: Vec<usize> = (0..100).map(|i| usize::from(i < 30)).collect();
        let (a, b) = stratified_split(&labels, 0.2, 1, 0);
        assert_eq!(a.len() + b.len(), 100);
        assert_eq!(b.iter().filter(|&&i| labels[i] == 1).count(), 6);
        assert_eq!(b.len(), 20);
    }
}
