use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::events::{EventKind, EventRecord};
use crate::datamodel::MixedBatch;
use crate::error::{Error, Result};
use crate::tensor::Tensor3;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    pub kind: EventKind,
}

/// Hourly cells per subject, `None` marking an empty bucket.
#[derive(Clone, Debug, PartialEq)]
pub struct HourlyGrid {
    pub subjects: Vec<String>,
    pub variables: Vec<VariableSpec>,
    pub t: usize,
    /// Row-major `[subject][hour][variable]`.
    pub values: Vec<Option<f64>>,
}

impl HourlyGrid {
    pub fn empty(subjects: Vec<String>, variables: Vec<VariableSpec>, t: usize) -> Self {
        let len = subjects.len() * t * variables.len();
        HourlyGrid {
            subjects,
            variables,
            t,
            values: vec![None; len],
        }
    }

    fn idx(&self, s: usize, h: usize, v: usize) -> usize {
        (s * self.t + h) * self.variables.len() + v
    }

    pub fn get(&self, s: usize, h: usize, v: usize) -> Option<f64> {
        self.values[self.idx(s, h, v)]
    }

    pub fn set(&mut self, s: usize, h: usize, v: usize, value: Option<f64>) {
        let i = self.idx(s, h, v);
        self.values[i] = value;
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }

    fn indices_of(&self, kind: EventKind) -> Vec<usize> {
        (0..self.variables.len())
            .filter(|&v| self.variables[v].kind == kind)
            .collect()
    }
}

/// Buckets events into hours `0..t`: mean for continuous variables, max for
/// discrete ones. Subjects appear in order of first event; events past the
/// horizon are dropped.
pub fn aggregate_hourly(events: &[EventRecord], variables: &[VariableSpec], t: usize) -> Result<HourlyGrid> {
    let var_idx: HashMap<&str, usize> = variables
        .iter()
        .enumerate()
        .map(|(i, v)| (v.name.as_str(), i))
        .collect();
    let mut subjects: Vec<String> = Vec::new();
    let mut subj_idx: HashMap<&str, usize> = HashMap::new();
    for e in events {
        if !var_idx.contains_key(e.variable.as_str()) {
            return Err(Error::UnknownVariable(e.variable.clone()));
        }
        if !subj_idx.contains_key(e.subject_id.as_str()) {
            subj_idx.insert(&e.subject_id, subjects.len());
            subjects.push(e.subject_id.clone());
        }
    }
    let nv = variables.len();
    let mut sums = vec![0.0; subjects.len() * t * nv];
    let mut counts = vec![0usize; sums.len()];
    for e in events {
        let hour = (e.timestamp / 60) as usize;
        if e.timestamp < 0 || hour >= t {
            continue;
        }
        let v = var_idx[e.variable.as_str()];
        let i = (subj_idx[e.subject_id.as_str()] * t + hour) * nv + v;
        match variables[v].kind {
            EventKind::Continuous => sums[i] += e.value,
            EventKind::Discrete => {
                let on = if e.value > 0.0 { 1.0 } else { 0.0 };
                sums[i] = if counts[i] == 0 { on } else { sums[i].max(on) };
            }
        }
        counts[i] += 1;
    }
    let mut grid = HourlyGrid::empty(subjects, variables.to_vec(), t);
    for (i, cell) in grid.values.iter_mut().enumerate() {
        if counts[i] > 0 {
            let v = i % nv;
            *cell = Some(match variables[v].kind {
                EventKind::Continuous => sums[i] / counts[i] as f64,
                EventKind::Discrete => sums[i],
            });
        }
    }
    Ok(grid)
}

/// Clamps continuous cells to their variable's range. Variables without a
/// range and missing cells are left alone.
pub fn clip_outliers(grid: &HourlyGrid, ranges: &BTreeMap<String, (f64, f64)>) -> HourlyGrid {
    let mut out = grid.clone();
    for v in grid.indices_of(EventKind::Continuous) {
        let Some(&(lo, hi)) = ranges.get(&grid.variables[v].name) else {
            continue;
        };
        for s in 0..grid.subjects.len() {
            for h in 0..grid.t {
                if let Some(x) = grid.get(s, h, v) {
                    out.set(s, h, v, Some(x.clamp(lo, hi)));
                }
            }
        }
    }
    out
}

/// Fills every missing cell.
///
/// Continuous: forward fill, leading gap from the subject mean, unobserved
/// subject from the cohort mean. Discrete: a missing hour means no
/// intervention was charted, so it becomes 0.
pub fn impute_simple(grid: &HourlyGrid) -> Result<HourlyGrid> {
    let mut out = grid.clone();
    let ns = grid.subjects.len();
    for v in 0..grid.variables.len() {
        if grid.variables[v].kind == EventKind::Discrete {
            for s in 0..ns {
                for h in 0..grid.t {
                    if grid.get(s, h, v).is_none() {
                        out.set(s, h, v, Some(0.0));
                    }
                }
            }
            continue;
        }
        let observed: Vec<f64> = (0..ns)
            .flat_map(|s| (0..grid.t).filter_map(move |h| grid.get(s, h, v)))
            .collect();
        if observed.is_empty() {
            return Err(Error::UnobservedVariable(grid.variables[v].name.clone()));
        }
        let cohort_mean = observed.iter().sum::<f64>() / observed.len() as f64;
        for s in 0..ns {
            let own: Vec<f64> = (0..grid.t).filter_map(|h| grid.get(s, h, v)).collect();
            let mut last = if own.is_empty() {
                cohort_mean
            } else {
                own.iter().sum::<f64>() / own.len() as f64
            };
            for h in 0..grid.t {
                match grid.get(s, h, v) {
                    Some(x) => last = x,
                    None => out.set(s, h, v, Some(last)),
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarRange {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

impl VarRange {
    pub fn degenerate(&self) -> bool {
        self.max <= self.min
    }
}

/// Per-variable min/max of the continuous channels, in channel order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub ranges: Vec<VarRange>,
}

impl NormStats {
    /// Observed extremes over the given subjects (all when `None`).
    pub fn fit(grid: &HourlyGrid, subjects: Option<&[usize]>) -> NormStats {
        let all: Vec<usize> = (0..grid.subjects.len()).collect();
        let subjects = subjects.unwrap_or(&all);
        let ranges = grid
            .indices_of(EventKind::Continuous)
            .into_iter()
            .map(|v| {
                let (min, max) = subjects
                    .iter()
                    .flat_map(|&s| (0..grid.t).filter_map(move |h| grid.get(s, h, v)))
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
                let (min, max) = if min.is_finite() { (min, max) } else { (0.0, 0.0) };
                VarRange {
                    name: grid.variables[v].name.clone(),
                    min,
                    max,
                }
            })
            .collect();
        NormStats { ranges }
    }
}

#[derive(Clone, Debug)]
pub struct Normalized {
    pub batch: MixedBatch,
    /// Constant variables mapped to 0.
    pub flagged: Vec<String>,
}

/// Min-max scales continuous variables into [0,1] and stacks both kinds into
/// a [`MixedBatch`]. The grid must be fully imputed.
pub fn normalize(grid: &HourlyGrid, stats: &NormStats) -> Result<Normalized> {
    let cont_vars = grid.indices_of(EventKind::Continuous);
    let disc_vars = grid.indices_of(EventKind::Discrete);
    if stats.ranges.len() != cont_vars.len() {
        return Err(Error::shape("normalization stats", cont_vars.len(), stats.ranges.len()));
    }
    for (r, &v) in stats.ranges.iter().zip(&cont_vars) {
        if r.name != grid.variables[v].name {
            return Err(Error::UnknownVariable(r.name.clone()));
        }
    }
    let n = grid.subjects.len();
    let mut cont = Tensor3::zeros(n, grid.t, cont_vars.len());
    let mut disc = Tensor3::zeros(n, grid.t, disc_vars.len());
    for s in 0..n {
        for h in 0..grid.t {
            for (j, (&v, r)) in cont_vars.iter().zip(&stats.ranges).enumerate() {
                let x = grid
                    .get(s, h, v)
                    .ok_or_else(|| Error::UnobservedVariable(grid.variables[v].name.clone()))?;
                let y = if r.degenerate() {
                    0.0
                } else {
                    ((x - r.min) / (r.max - r.min)).clamp(0.0, 1.0)
                };
                cont.set(s, h, j, y);
            }
            for (k, &v) in disc_vars.iter().enumerate() {
                let x = grid
                    .get(s, h, v)
                    .ok_or_else(|| Error::UnobservedVariable(grid.variables[v].name.clone()))?;
                disc.set(s, h, k, if x > 0.0 { 1.0 } else { 0.0 });
            }
        }
    }
    let flagged: Vec<String> = stats
        .ranges
        .iter()
        .filter(|r| r.degenerate())
        .map(|r| r.name.clone())
        .collect();
    for name in &flagged {
        log::warn!("variable {name} is constant; normalized to 0");
    }
    let names = |idx: &[usize]| idx.iter().map(|&v| grid.variables[v].name.clone()).collect();
    let batch = MixedBatch::new(cont, disc, None, names(&cont_vars), names(&disc_vars))?;
    Ok(Normalized { batch, flagged })
}

/// Maps normalized continuous values back to original units.
pub fn denormalize(cont: &Tensor3, stats: &NormStats) -> Result<Tensor3> {
    if cont.d != stats.ranges.len() {
        return Err(Error::shape("denormalize channels", stats.ranges.len(), cont.d));
    }
    let mut out = cont.clone();
    for (i, v) in out.data.iter_mut().enumerate() {
        let r = &stats.ranges[i % cont.d];
        *v = r.min + *v * (r.max - r.min).max(0.0);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(s: &str, ts: i64, var: &str, value: f64, kind: EventKind) -> EventRecord {
        EventRecord {
            subject_id: s.into(),
            timestamp: ts,
            variable: var.into(),
            value,
            kind,
        }
    }

    fn vars() -> Vec<VariableSpec> {
        vec![
            VariableSpec {
                name: "hr".into(),
                kind: EventKind::Continuous,
            },
            VariableSpec {
                name: "vent".into(),
                kind: EventKind::Discrete,
            },
        ]
    }

    fn series(values: &[Option<f64>]) -> HourlyGrid {
        let mut g = HourlyGrid::empty(vec!["a".into()], vars()[..1].to_vec(), values.len());
        for (h, &v) in values.iter().enumerate() {
            g.set(0, h, 0, v);
        }
        g
    }

    #[test]
    fn hourly_mean_and_max() {
        let events = [
            ev("a", 10, "hr", 2.0, EventKind::Continuous),
            ev("a", 50, "hr", 4.0, EventKind::Continuous),
            ev("a", 123, "vent", 1.0, EventKind::Discrete),
            ev("a", 130, "vent", 0.0, EventKind::Discrete),
        ];
        let g = aggregate_hourly(&events, &vars(), 6).unwrap();
        assert_eq!(g.get(0, 0, 0), Some(3.0));
        assert_eq!(g.get(0, 5, 0), None);
        assert_eq!(g.get(0, 2, 1), Some(1.0));
    }

    #[test]
    fn unknown_variable_is_named() {
        let err = aggregate_hourly(&[ev("a", 0, "spo2", 1.0, EventKind::Continuous)], &vars(), 2).unwrap_err();
        assert!(matches!(err, Error::UnknownVariable(ref v) if v == "spo2"));
    }

    #[test]
    fn clipping() {
        let g = series(&[Some(500.0), Some(80.0), None]);
        let ranges = BTreeMap::from([("hr".to_string(), (0.0, 300.0))]);
        let c = clip_outliers(&g, &ranges);
        assert_eq!(c.values, vec![Some(300.0), Some(80.0), None]);
    }

    #[test]
    fn imputation_rules() {
        let f = impute_simple(&series(&[Some(1.0), None, None])).unwrap();
        assert_eq!(f.values, vec![Some(1.0); 3]);
        let f = impute_simple(&series(&[None, Some(2.0), Some(4.0)])).unwrap();
        assert_eq!(f.values, vec![Some(3.0), Some(2.0), Some(4.0)]);

        let mut g = HourlyGrid::empty(vec!["a".into(), "b".into()], vars()[..1].to_vec(), 2);
        g.set(0, 0, 0, Some(4.0));
        g.set(0, 1, 0, Some(6.0));
        let f = impute_simple(&g).unwrap();
        assert_eq!(f.get(1, 0, 0), Some(5.0));
        assert_eq!(f.get(1, 1, 0), Some(5.0));
        assert_eq!(impute_simple(&f).unwrap(), f);
    }

    #[test]
    fn unobserved_everywhere_is_an_error() {
        let err = impute_simple(&series(&[None, None])).unwrap_err();
        assert!(matches!(err, Error::UnobservedVariable(_)));
    }

    #[test]
    fn normalization_boundaries_and_roundtrip() {
        let g = series(&[Some(10.0), Some(20.0), Some(15.0)]);
        let stats = NormStats::fit(&g, None);
        let out = normalize(&g, &stats).unwrap();
        assert_eq!(out.batch.cont.data, vec![0.0, 1.0, 0.5]);
        let back = denormalize(&out.batch.cont, &stats).unwrap();
        assert_eq!(back.data, vec![10.0, 20.0, 15.0]);
    }

    #[test]
    fn constant_variable_is_flagged() {
        let g = series(&[Some(7.0), Some(7.0)]);
        let out = normalize(&g, &NormStats::fit(&g, None)).unwrap();
        assert_eq!(out.flagged, vec!["hr".to_string()]);
        assert!(out.batch.cont.data.iter().all(|&v| v == 0.0));
    }
}
