//! Intervention-status prediction and the real/synthetic training protocols.

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::classifier::{stratified_split, ClassifierConfig, SequenceClassifier};
use crate::datamodel::MixedBatch;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream, stream_rng};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InterventionStatus {
    StayOn,
    Onset,
    SwitchOff,
    StayOff,
}

impl InterventionStatus {
    pub const ALL: [InterventionStatus; 4] = [
        InterventionStatus::StayOn,
        InterventionStatus::Onset,
        InterventionStatus::SwitchOff,
        InterventionStatus::StayOff,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Status of a binary channel over a prediction window, given whether it
/// was on at the last observed hour. A window that switches off at any
/// point after starting on counts as `SwitchOff`, even if it turns on again.
pub fn label_intervention_status(start_on: bool, window: &[f64]) -> InterventionStatus {
    let ever_on = window.iter().any(|&v| v >= 0.5);
    let ever_off = window.iter().any(|&v| v < 0.5);
    match (start_on, ever_on, ever_off) {
        (true, _, true) => InterventionStatus::SwitchOff,
        (true, _, false) => InterventionStatus::StayOn,
        (false, true, _) => InterventionStatus::Onset,
        (false, false, _) => InterventionStatus::StayOff,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskWindows {
    pub obs_hours: usize,
    pub pred_hours: usize,
    pub horizon: usize,
}

impl Default for TaskWindows {
    fn default() -> Self {
        TaskWindows {
            obs_hours: 12,
            pred_hours: 12,
            horizon: 24,
        }
    }
}

impl TaskWindows {
    pub fn validate(&self) -> Result<()> {
        if self.obs_hours == 0 || self.pred_hours == 0 || self.obs_hours + self.pred_hours != self.horizon {
            return Err(Error::InvalidConfig(
                "task windows need obs_hours + pred_hours == horizon, both >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Status label of `channel` for every record.
pub fn task_labels(batch: &MixedBatch, channel: usize, windows: &TaskWindows) -> Result<Vec<usize>> {
    windows.validate()?;
    if batch.t() != windows.horizon {
        return Err(Error::shape("task horizon", windows.horizon, batch.t()));
    }
    if channel >= batch.k() {
        return Err(Error::shape("target channel", format!("< {}", batch.k()), channel));
    }
    Ok((0..batch.n())
        .map(|i| {
            let start = batch.disc.get(i, windows.obs_hours - 1, channel) >= 0.5;
            let window: Vec<f64> = (windows.obs_hours..windows.horizon)
                .map(|t| batch.disc.get(i, t, channel))
                .collect();
            label_intervention_status(start, &window).index()
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitProtocol {
    /// Training share for the generative model.
    pub idx_a: Vec<usize>,
    pub idx_a_tr: Vec<usize>,
    pub idx_a_te: Vec<usize>,
    pub seed: u64,
}

/// Seeded 70/15/15 partition of `0..n`.
pub fn split_protocol(n: usize, seed: u64) -> Result<SplitProtocol> {
    if n < 10 {
        return Err(Error::TooFewSamples(format!("split needs n >= 10, got {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng(seed, stream::SPLIT));
    let a = n * 7 / 10;
    let tr = (n - a) / 2;
    Ok(SplitProtocol {
        idx_a: idx[..a].to_vec(),
        idx_a_tr: idx[a..a + tr].to_vec(),
        idx_a_te: idx[a + tr..].to_vec(),
        seed,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentMode {
    /// Real records plus a share of synthetic ones.
    Alpha,
    /// Synthetic records plus a share of real ones.
    Beta,
}

/// Adds `⌊ratio·|pool|⌋` distinct records drawn from the other set, then shuffles.
pub fn augment(
    real: &MixedBatch,
    syn: &MixedBatch,
    mode: AugmentMode,
    ratio: f64,
    seed: u64,
) -> Result<MixedBatch> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidRatio(ratio));
    }
    let (base, pool) = match mode {
        AugmentMode::Alpha => (real, syn),
        AugmentMode::Beta => (syn, real),
    };
    let mut rng = stream_rng(seed, stream::AUGMENT);
    let count = ((ratio * pool.n() as f64) + 1e-9).floor() as usize;
    let picked = index::sample(&mut rng, pool.n(), count.min(pool.n())).into_vec();
    let merged = if picked.is_empty() {
        base.clone()
    } else {
        base.concat(&pool.select(&picked))?
    };
    let mut order: Vec<usize> = (0..merged.n()).collect();
    order.shuffle(&mut rng);
    Ok(merged.select(&order))
}

/// One-vs-rest AUROC by the rank-sum statistic with average ranks for ties.
/// `None` when the class has no positives or no negatives.
pub fn auroc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let pos = positive.iter().filter(|p| **p).count();
    let neg = positive.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[order[k]] = avg;
        }
        i = j + 1;
    }
    let rank_sum: f64 = (0..scores.len()).filter(|&k| positive[k]).map(|k| ranks[k]).sum();
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Some(u / (pos * neg) as f64)
}

/// Macro-average of one-vs-rest AUROC over `classes` (those with both
/// positives and negatives in `labels`).
pub fn macro_auroc(probs: &Matrix, labels: &[usize], classes: &[usize]) -> Option<f64> {
    let scores: Vec<f64> = classes
        .iter()
        .filter_map(|&c| {
            let s: Vec<f64> = (0..probs.rows).map(|r| probs.get(r, c)).collect();
            let p: Vec<bool> = labels.iter().map(|&l| l == c).collect();
            auroc(&s, &p)
        })
        .collect();
    (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64)
}

fn obs_window(batch: &MixedBatch, windows: &TaskWindows) -> crate::tensor::Tensor3 {
    batch.cont.time_window(0, windows.obs_hours)
}

/// Trains the status classifier on `train` and scores it on `test` by
/// macro-AUROC. Classes missing from the training labels are dropped.
pub fn run_task(
    train: &MixedBatch,
    test: &MixedBatch,
    target_channel: usize,
    windows: &TaskWindows,
    seed: u64,
) -> Result<f64> {
    let cfg = ClassifierConfig {
        bidirectional: false,
        ..Default::default()
    };
    run_task_with(train, test, target_channel, windows, &cfg, seed)
}

pub fn run_task_with(
    train: &MixedBatch,
    test: &MixedBatch,
    target_channel: usize,
    windows: &TaskWindows,
    cfg: &ClassifierConfig,
    seed: u64,
) -> Result<f64> {
    let y_train = task_labels(train, target_channel, windows)?;
    let y_test = task_labels(test, target_channel, windows)?;
    run_task_labels(train, &y_train, test, &y_test, windows, cfg, seed)
}

/// [`run_task_with`] on caller-supplied status labels.
pub fn run_task_labels(
    train: &MixedBatch,
    y_train: &[usize],
    test: &MixedBatch,
    y_test: &[usize],
    windows: &TaskWindows,
    cfg: &ClassifierConfig,
    seed: u64,
) -> Result<f64> {
    let present: Vec<usize> = (0..4).filter(|c| y_train.contains(c)).collect();
    for s in InterventionStatus::ALL {
        if !present.contains(&s.index()) && y_test.contains(&s.index()) {
            log::warn!("class {s:?} absent from training data; dropped from the macro average");
        }
    }
    let x = obs_window(train, windows);
    let (fit, val) = stratified_split(y_train, 0.2, seed, stream::SPLIT + 2);
    let pick = |idx: &[usize]| (x.select(idx), idx.iter().map(|&i| y_train[i]).collect::<Vec<_>>());
    let (xf, yf) = pick(&fit);
    let (xv, yv) = pick(&val);
    let model = SequenceClassifier::fit(&xf, &yf, 4, (&xv, &yv), cfg, derive_seed(seed, 7))?;
    let probs = model.predict_proba(&obs_window(test, windows))?;
    macro_auroc(&probs, y_test, &present)
        .ok_or_else(|| Error::TooFewSamples("no class has both positives and negatives in test".into()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "TRTR")]
    Trtr,
    #[serde(rename = "TSTR")]
    Tstr,
    #[serde(rename = "TSRTR-alpha")]
    TsrtrAlpha,
    #[serde(rename = "TSRTR-beta")]
    TsrtrBeta,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Trtr => "TRTR",
            Scenario::Tstr => "TSTR",
            Scenario::TsrtrAlpha => "TSRTR-alpha",
            Scenario::TsrtrBeta => "TSRTR-beta",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub scenario: Scenario,
    pub ratio: f64,
    pub seed: u64,
    pub auroc: f64,
}

/// Every scenario on one split: TRTR and TSTR once, both augmentation modes
/// at each positive ratio. `syn` plays the role of the synthetic set the
/// size of `a_tr`.
pub fn run_scenarios(
    a_tr: &MixedBatch,
    a_te: &MixedBatch,
    syn: &MixedBatch,
    ratios: &[f64],
    target_channel: usize,
    windows: &TaskWindows,
    cfg: &ClassifierConfig,
    seed: u64,
) -> Result<Vec<ScenarioRow>> {
    let mut jobs: Vec<(Scenario, f64)> = vec![(Scenario::Trtr, 0.0), (Scenario::Tstr, 0.0)];
    for &r in ratios.iter().filter(|r| **r > 0.0) {
        jobs.push((Scenario::TsrtrAlpha, r));
        jobs.push((Scenario::TsrtrBeta, r));
    }
    let results = crate::parallel::map_jobs(jobs, |(scenario, ratio)| -> Result<ScenarioRow> {
        let train = match scenario {
            Scenario::Trtr => a_tr.clone(),
            Scenario::Tstr => syn.clone(),
            Scenario::TsrtrAlpha => augment(a_tr, syn, AugmentMode::Alpha, ratio, seed)?,
            Scenario::TsrtrBeta => augment(a_tr, syn, AugmentMode::Beta, ratio, seed)?,
        };
        let auroc = run_task_with(&train, a_te, target_channel, windows, cfg, seed)?;
        Ok(ScenarioRow {
            scenario,
            ratio,
            seed,
            auroc,
        })
    });
    results.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor3;

    #[test]
    fn status_cases() {
        use InterventionStatus::*;
        assert_eq!(label_intervention_status(true, &[1.0, 1.0, 1.0, 1.0]), StayOn);
        assert_eq!(label_intervention_status(false, &[0.0, 0.0, 1.0, 1.0]), Onset);
        assert_eq!(label_intervention_status(false, &[0.0; 4]), StayOff);
        assert_eq!(label_intervention_status(true, &[1.0, 0.0, 1.0]), SwitchOff);
    }

    #[test]
    fn split_sizes() {
        let s = split_protocol(100, 4).unwrap();
        assert_eq!((s.idx_a.len(), s.idx_a_tr.len(), s.idx_a_te.len()), (70, 15, 15));
        let mut all: Vec<usize> = [s.idx_a.clone(), s.idx_a_tr.clone(), s.idx_a_te.clone()].concat();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(s, split_protocol(100, 4).unwrap());
    }

    fn batch(n: usize, v: f64) -> MixedBatch {
        MixedBatch::with_default_names(
            Tensor3::from_vec(n, 2, 1, vec![v; 2 * n]).unwrap(),
            Tensor3::zeros(n, 2, 1),
            None,
        )
        .unwrap()
    }

    #[test]
    fn augment_sizes() {
        let real = batch(100, 0.2);
        let syn = batch(100, 0.8);
        assert_eq!(augment(&real, &syn, AugmentMode::Alpha, 0.5, 1).unwrap().n(), 150);
        assert_eq!(augment(&real, &syn, AugmentMode::Beta, 0.25, 1).unwrap().n(), 125);
        let same = augment(&real, &syn, AugmentMode::Alpha, 0.0, 1).unwrap();
        assert!(same.cont.data.iter().all(|&v| v == 0.2));
        assert!(matches!(
            augment(&real, &syn, AugmentMode::Alpha, 1.5, 1),
            Err(Error::InvalidRatio(_))
        ));
    }

    #[test]
    fn auroc_known_values() {
        assert_eq!(auroc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]), Some(0.75));
        assert_eq!(auroc(&[0.5, 0.5], &[true, false]), Some(0.5));
        assert_eq!(auroc(&[0.5], &[true]), None);
    }
}
